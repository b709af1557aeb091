//! Syntax tree for protocol specification documents.

use serde::Serialize;

/// Source position of a construct. Positions never participate in structural
/// comparison: two trees that differ only in layout are equal.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub fn new(line: u32, col: u32) -> Self {
        Span { line, col }
    }
}

impl PartialEq for Span {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Eq for Span {}

/// A name with an optional namespace prefix. The local part of a source-level
/// name may not contain whitespace, brackets, or separators; expanded names
/// (full IRIs) are exempt.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct QualifiedName {
    pub prefix: Option<String>,
    pub local: String,
}

impl QualifiedName {
    pub fn plain(local: impl Into<String>) -> Self {
        QualifiedName {
            prefix: None,
            local: local.into(),
        }
    }

    pub fn prefixed(prefix: impl Into<String>, local: impl Into<String>) -> Self {
        QualifiedName {
            prefix: Some(prefix.into()),
            local: local.into(),
        }
    }

    /// Source form: `prefix:local` or bare `local`.
    pub fn text(&self) -> String {
        match &self.prefix {
            Some(p) => format!("{}:{}", p, self.local),
            None => self.local.clone(),
        }
    }
}

impl std::fmt::Display for QualifiedName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.text())
    }
}

/// Parameter abbreviation, written in parentheses inside or after the name.
/// `offset` is the byte position of the abbreviation within the full name;
/// `None` marks the trailing-alias form `Name(A)` where the abbreviation is
/// not part of the name itself.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Abbrev {
    pub text: String,
    pub offset: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Adornment {
    In,
    Nil,
    Out,
    Any,
    Opt,
    Unspecified,
}

impl Adornment {
    pub fn keyword(self) -> Option<&'static str> {
        match self {
            Adornment::In => Some("in"),
            Adornment::Nil => Some("nil"),
            Adornment::Out => Some("out"),
            Adornment::Any => Some("any"),
            Adornment::Opt => Some("opt"),
            Adornment::Unspecified => None,
        }
    }
}

/// Qualifier flags; source order is irrelevant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Qualifiers {
    pub key: bool,
    pub local: bool,
    pub set: bool,
}

impl Qualifiers {
    pub fn any(&self) -> bool {
        self.key || self.local || self.set
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TypeName {
    Role,
    Protocol,
    Name(QualifiedName),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RelOp {
    #[serde(rename = "subseteq")]
    SubsetEq,
    #[serde(rename = "in")]
    ElementOf,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">")]
    Gt,
}

impl RelOp {
    pub fn symbol(self) -> &'static str {
        match self {
            RelOp::SubsetEq => "\u{2286}",
            RelOp::ElementOf => "\u{2208}",
            RelOp::Eq => "=",
            RelOp::Lt => "<",
            RelOp::Gt => ">",
        }
    }
}

/// Right-hand side of a relational constraint: another parameter or a literal.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintTarget {
    Name(QualifiedName),
    Str(String),
    Int(i64),
    Dec(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Constraint {
    Type(TypeName),
    Relation { op: RelOp, target: ConstraintTarget },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Parameter {
    pub name: QualifiedName,
    pub abbreviation: Option<Abbrev>,
    pub adornment: Adornment,
    /// True when the adornment was not written in the source and `in` was
    /// assumed (declaration sites only).
    #[serde(skip)]
    pub defaulted: bool,
    pub qualifiers: Qualifiers,
    pub constraints: Vec<Constraint>,
    #[serde(skip)]
    pub span: Span,
}

impl Parameter {
    pub fn plain(name: &str) -> Self {
        Parameter {
            name: QualifiedName::plain(name),
            abbreviation: None,
            adornment: Adornment::Unspecified,
            defaulted: false,
            qualifiers: Qualifiers::default(),
            constraints: Vec::new(),
            span: Span::default(),
        }
    }

    /// The declared type constraint, if any.
    pub fn type_constraint(&self) -> Option<&TypeName> {
        self.constraints.iter().find_map(|c| match c {
            Constraint::Type(t) => Some(t),
            _ => None,
        })
    }

    pub fn is_role(&self) -> bool {
        matches!(self.type_constraint(), Some(TypeName::Role))
    }

    pub fn is_protocol(&self) -> bool {
        matches!(self.type_constraint(), Some(TypeName::Protocol))
    }
}

/// One conjunct of a parameter expression: a single adorned parameter or a
/// disjunction of parameter expressions.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Clause {
    Param(Parameter),
    Or(Vec<ParamExpr>),
}

/// A conjunction of clauses. Doubles as the completion condition of the
/// declaration it belongs to.
#[derive(Clone, Debug, PartialEq, Default, Serialize)]
pub struct ParamExpr {
    pub clauses: Vec<Clause>,
}

impl ParamExpr {
    /// All parameters in the expression, depth first.
    pub fn params(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        collect_params(self, &mut out);
        out
    }
}

fn collect_params<'a>(expr: &'a ParamExpr, out: &mut Vec<&'a Parameter>) {
    for clause in &expr.clauses {
        match clause {
            Clause::Param(p) => out.push(p),
            Clause::Or(exprs) => {
                for e in exprs {
                    collect_params(e, out);
                }
            }
        }
    }
}

/// Sender or recipient position of a message schema.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoleRef {
    pub adornment: Adornment,
    #[serde(skip)]
    pub defaulted: bool,
    pub name: QualifiedName,
    #[serde(skip)]
    pub span: Span,
}

/// Body entry of a protocol: a call-style reference to another protocol (or
/// to a protocol-typed parameter), or an inline message schema.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    Call {
        target: QualifiedName,
        arguments: ParamExpr,
        #[serde(skip)]
        span: Span,
    },
    Message(Box<ProtocolDecl>),
}

/// A protocol declaration; a message schema is an elementary declaration with
/// `is_message` set and the payload as its public expression.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProtocolDecl {
    pub name: QualifiedName,
    pub public: ParamExpr,
    pub privates: Vec<Parameter>,
    pub body: Vec<Reference>,
    pub is_message: bool,
    pub sender: Option<RoleRef>,
    pub recipients: Vec<RoleRef>,
    #[serde(skip)]
    pub span: Span,
}

impl ProtocolDecl {
    pub fn public_params(&self) -> Vec<&Parameter> {
        self.public.params()
    }
}

/// A whole source document: preamble entries followed by declarations.
#[derive(Clone, Debug, PartialEq, Default, Serialize)]
pub struct Specification {
    pub preamble: Vec<(String, String)>,
    pub declarations: Vec<ProtocolDecl>,
}

impl Specification {
    pub fn preamble_value(&self, name: &str) -> Option<&str> {
        self.preamble
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_str())
    }
}
