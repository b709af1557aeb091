//! Semantic resolution: reference binding, adornment inference, composition
//! flattening with parameter-identity maps, key discipline, and completion
//! formula extraction.
//!
//! Resolution flattens each declaration into its full schema set. Message
//! schemas keep the identity (and wire contract) of the protocol that
//! declared them; composition only remaps which composition-level parameter
//! each payload position feeds.

mod check;

use crate::diagnostics::{codes, Diagnostic};
use crate::lang::{
    self, Adornment, Clause, Constraint, ConstraintTarget, ParamExpr, Parameter, ProtocolDecl,
    Qualifiers, Reference, Specification, TypeName,
};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown protocol `{0}`")]
    UnknownProtocol(String),
    #[error("protocol `{0}` did not resolve cleanly")]
    Unresolved(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Visibility {
    Public,
    Private,
    /// Used by a message or reference without being declared.
    Auto,
}

/// One composition-level parameter identity.
#[derive(Clone, Debug, Serialize)]
pub struct ParamInfo {
    pub id: String,
    pub visibility: Visibility,
    pub adornment: Adornment,
    /// Whether the declaration wrote the adornment (defaulted `in` is exempt
    /// from conflict checks).
    pub explicit: bool,
    pub qualifiers: Qualifiers,
    pub type_hint: Option<TypeName>,
    pub aliases: Vec<String>,
}

impl ParamInfo {
    pub fn is_role(&self) -> bool {
        matches!(self.type_hint, Some(TypeName::Role))
    }

    pub fn is_protocol(&self) -> bool {
        matches!(self.type_hint, Some(TypeName::Protocol))
    }
}

/// A relational constraint with its target resolved against the composition.
#[derive(Clone, Debug, Serialize)]
pub enum SlotConstraint {
    Type(TypeName),
    Relation {
        op: lang::RelOp,
        target: ResolvedTarget,
    },
}

#[derive(Clone, Debug, Serialize)]
pub enum ResolvedTarget {
    Param(usize),
    Str(String),
    Int(i64),
    Dec(f64),
}

/// One payload position of a schema; `name` is the declaring protocol's
/// parameter name (the wire contract), independent of any composition.
#[derive(Clone, Debug, Serialize)]
pub struct PayloadSlot {
    pub name: String,
    pub adornment: Adornment,
    pub key: bool,
    pub local: bool,
    pub set: bool,
    pub opt: bool,
    pub constraints: Vec<SlotConstraint>,
}

/// A message schema as enacted inside one resolved protocol. `id` is globally
/// unique in the MAS and shared by every composition embedding the schema.
#[derive(Clone, Debug, Serialize)]
pub struct ResolvedSchema {
    pub id: String,
    pub declaring_protocol: String,
    pub sender: usize,
    pub sender_adornment: Adornment,
    /// True when the declaration left the sender unadorned: the role is
    /// presumed bound outside the protocol, so a configured agent may fill it
    /// when emitting.
    pub sender_defaulted: bool,
    pub recipients: Vec<RecipientSlot>,
    pub payload: Vec<PayloadSlot>,
    /// Composition-level parameter fed by each payload position.
    pub slot_params: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RecipientSlot {
    pub param: usize,
    pub adornment: Adornment,
    pub defaulted: bool,
}

impl ResolvedSchema {
    /// Payload positions that carry this schema's keys, in payload order.
    pub fn key_positions(&self) -> Vec<usize> {
        self.payload
            .iter()
            .enumerate()
            .filter(|(_, s)| s.key)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Completion condition over public parameter identities.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Formula {
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Bound(String),
}

impl Formula {
    pub fn eval(&self, bound: &dyn Fn(&str) -> bool) -> bool {
        match self {
            Formula::And(fs) => fs.iter().all(|f| f.eval(bound)),
            Formula::Or(fs) => fs.iter().any(|f| f.eval(bound)),
            Formula::Bound(p) => bound(p),
        }
    }
}

impl std::fmt::Display for Formula {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Formula::And(fs) => {
                let parts: Vec<String> = fs.iter().map(|x| x.to_string()).collect();
                write!(f, "and({})", parts.join(", "))
            }
            Formula::Or(fs) => {
                let parts: Vec<String> = fs.iter().map(|x| x.to_string()).collect();
                write!(f, "or({})", parts.join(", "))
            }
            Formula::Bound(p) => write!(f, "{p}"),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LocalKey {
    pub name: String,
    pub scope: Vec<String>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct KeyModel {
    pub global_keys: Vec<String>,
    pub local_keys: Vec<LocalKey>,
    /// Nesting chains formed by several out local keys in one schema.
    pub hierarchy: Vec<Vec<String>>,
    /// Key pairs bound together by one schema (one in, one out): either key
    /// correlates the same enactment.
    pub invertible: Vec<(String, String)>,
}

/// Positional interface used to match reference arguments.
#[derive(Clone, Debug, Serialize)]
pub enum IfaceNode {
    Param(usize),
    Or(Vec<Vec<IfaceNode>>),
}

/// A reference through a protocol-typed parameter, resolved at enactment time.
#[derive(Clone, Debug, Serialize)]
pub struct LateRef {
    pub target_param: usize,
    pub args: Vec<IfaceNode>,
    /// Ref-site adornments per top-level argument clause (for conflicts).
    pub arg_adornments: Vec<Adornment>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResolvedProtocol {
    pub name: String,
    pub is_message: bool,
    pub params: Vec<ParamInfo>,
    /// Public parameters in clause order.
    pub public_order: Vec<usize>,
    pub interface: Vec<IfaceNode>,
    pub schemas: Vec<ResolvedSchema>,
    pub identity: BTreeMap<(String, String), usize>,
    pub key_model: KeyModel,
    pub completion: Formula,
    pub late_refs: Vec<LateRef>,
    /// Sender roles of initiating schemas (keys out, inputs external only).
    pub initiator_candidates: Vec<usize>,
}

impl ResolvedProtocol {
    pub fn param_index(&self, name: &str) -> Option<usize> {
        if let Some(i) = self.params.iter().position(|p| p.id == name) {
            return Some(i);
        }
        self.params
            .iter()
            .position(|p| p.aliases.iter().any(|a| a == name))
    }

    pub fn param_id(&self, idx: usize) -> &str {
        &self.params[idx].id
    }

    pub fn schema(&self, id: &str) -> Option<&ResolvedSchema> {
        self.schemas.iter().find(|s| s.id == id)
    }

    pub fn role_params(&self) -> Vec<usize> {
        let mut roles: BTreeSet<usize> = BTreeSet::new();
        for s in &self.schemas {
            roles.insert(s.sender);
            roles.extend(s.recipients.iter().map(|r| r.param));
        }
        roles.into_iter().collect()
    }
}

/// All protocols of a set of documents resolved together.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Loaded {
    pub protocols: BTreeMap<String, ResolvedProtocol>,
    /// Declaration order across the input documents.
    pub order: Vec<String>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Loaded {
    pub fn get(&self, name: &str) -> Result<&ResolvedProtocol, ModelError> {
        self.protocols
            .get(name)
            .ok_or_else(|| ModelError::UnknownProtocol(name.into()))
    }

    pub fn has_errors(&self) -> bool {
        self.diagnostics.iter().any(|d| d.is_error())
    }

    /// Schema lookup across every loaded protocol: (protocol name, schema).
    pub fn find_schema(&self, id: &str) -> Vec<(&str, &ResolvedSchema)> {
        let mut out = Vec::new();
        for name in &self.order {
            if let Some(p) = self.protocols.get(name) {
                if let Some(s) = p.schema(id) {
                    out.push((name.as_str(), s));
                }
            }
        }
        out
    }
}

/// Resolve one or more parsed documents into flattened protocols.
pub fn resolve(docs: &[(String, Specification)]) -> Loaded {
    let mut diagnostics = Vec::new();
    let mut expanded: Vec<(String, Specification)> = Vec::new();
    for (file, spec) in docs {
        match lang::expand_names(spec) {
            Ok(s) => expanded.push((file.clone(), s)),
            Err(e) => {
                let code = match e {
                    lang::ExpandError::UnknownPrefix(_) => codes::UNKNOWN_PREFIX,
                    lang::ExpandError::AmbiguousAlias(..) => codes::AMBIGUOUS_ALIAS,
                };
                diagnostics.push(Diagnostic::error(file, 0, 0, code, e.to_string()));
            }
        }
    }

    let mut decls: BTreeMap<String, (String, ProtocolDecl)> = BTreeMap::new();
    let mut order = Vec::new();
    for (file, spec) in &expanded {
        for decl in &spec.declarations {
            let name = decl.name.text();
            if decls.contains_key(&name) {
                diagnostics.push(Diagnostic::error(
                    file,
                    decl.span.line,
                    decl.span.col,
                    codes::DUPLICATE_DECLARATION,
                    format!("duplicate declaration of `{name}`"),
                ));
                continue;
            }
            decls.insert(name.clone(), (file.clone(), decl.clone()));
            order.push(name);
        }
    }

    let mut ctx = Resolver {
        decls,
        done: BTreeMap::new(),
        in_progress: BTreeSet::new(),
        diagnostics,
    };
    for name in &order {
        ctx.resolve_protocol(name);
    }
    let mut loaded = Loaded {
        protocols: ctx.done,
        order,
        diagnostics: ctx.diagnostics,
    };
    let per_protocol: Vec<Diagnostic> = loaded
        .order
        .iter()
        .filter_map(|n| loaded.protocols.get(n))
        .flat_map(|p| check::check_static_with(p, &loaded))
        .collect();
    loaded.diagnostics.extend(per_protocol);
    loaded
}

/// Convenience for a single in-memory document.
pub fn resolve_text(file: &str, text: &str) -> Result<Loaded, lang::SyntaxError> {
    let spec = lang::parse(text)?;
    Ok(resolve(&[(file.to_string(), spec)]))
}

/// Structural diagnostics for one resolved protocol.
pub fn check_static(resolved: &ResolvedProtocol) -> Vec<Diagnostic> {
    check::check_static_with(resolved, &Loaded::default())
}

/// The completion condition of a declaration, without resolving its body.
pub fn completion_formula(decl: &ProtocolDecl) -> Formula {
    formula_for_expr(&decl.public)
}

/// The key discipline of a declaration, without resolving its body.
pub fn key_model(decl: &ProtocolDecl) -> (KeyModel, Vec<Diagnostic>) {
    let loaded = resolve(&[("<memory>".to_string(), Specification {
        preamble: Vec::new(),
        declarations: vec![decl.clone()],
    })]);
    let name = decl.name.text();
    let km = loaded
        .protocols
        .get(&name)
        .map(|p| p.key_model.clone())
        .unwrap_or_default();
    (km, loaded.diagnostics)
}

fn formula_for_expr(expr: &ParamExpr) -> Formula {
    let mut parts = Vec::new();
    for clause in &expr.clauses {
        match clause {
            Clause::Param(p) => {
                if p.adornment == Adornment::Opt || p.adornment == Adornment::Nil {
                    continue;
                }
                parts.push(Formula::Bound(canonical_param_name(p)));
            }
            Clause::Or(exprs) => {
                let ops: Vec<Formula> = exprs
                    .iter()
                    .map(|e| {
                        let f = formula_for_expr(e);
                        match f {
                            Formula::And(mut fs) if fs.len() == 1 => fs.remove(0),
                            other => other,
                        }
                    })
                    .collect();
                parts.push(Formula::Or(ops));
            }
        }
    }
    Formula::And(parts)
}

/// The name a parameter is known by inside bodies: its trailing alias when it
/// has one (`Propose(R)` is used as `R`), otherwise its full name.
fn canonical_param_name(p: &Parameter) -> String {
    match &p.abbreviation {
        Some(ab) if ab.offset.is_none() => ab.text.clone(),
        _ => p.name.text(),
    }
}

// ---------------------------------------------------------------------------
// Resolution machinery
// ---------------------------------------------------------------------------

struct Resolver {
    decls: BTreeMap<String, (String, ProtocolDecl)>,
    done: BTreeMap<String, ResolvedProtocol>,
    in_progress: BTreeSet<String>,
    diagnostics: Vec<Diagnostic>,
}

impl Resolver {
    fn resolve_protocol(&mut self, name: &str) -> bool {
        if self.done.contains_key(name) {
            return true;
        }
        if self.in_progress.contains(name) {
            let (file, decl) = &self.decls[name];
            self.diagnostics.push(Diagnostic::error(
                file,
                decl.span.line,
                decl.span.col,
                codes::CYCLIC_REFERENCE,
                format!("protocol `{name}` references itself (directly or transitively)"),
            ));
            return false;
        }
        if !self.decls.contains_key(name) {
            return false;
        }
        self.in_progress.insert(name.to_string());
        let (file, decl) = self.decls[name].clone();
        let resolved = self.build(&file, &decl);
        self.in_progress.remove(name);
        self.done.insert(name.to_string(), resolved);
        true
    }

    fn build(&mut self, file: &str, decl: &ProtocolDecl) -> ResolvedProtocol {
        let name = decl.name.text();
        let mut b = Builder {
            file: file.to_string(),
            name: name.clone(),
            params: Vec::new(),
            by_name: BTreeMap::new(),
            public_bases: BTreeSet::new(),
            schemas: Vec::new(),
            identity: BTreeMap::new(),
            late_refs: Vec::new(),
            instance_counts: BTreeMap::new(),
            diagnostics: Vec::new(),
        };

        // For an elementary message the positional interface is sender,
        // recipients, then payload; roles are public even though only the
        // payload is written as public.
        let mut role_nodes = Vec::new();
        if decl.is_message {
            if let Some(s) = &decl.sender {
                let i = b.declare(
                    s.name.text(),
                    Visibility::Public,
                    s.adornment,
                    !s.defaulted,
                    Qualifiers::default(),
                    Some(TypeName::Role),
                    None,
                );
                role_nodes.push(IfaceNode::Param(i));
            }
            for r in &decl.recipients {
                if !b.by_name.contains_key(&r.name.text()) {
                    let i = b.declare(
                        r.name.text(),
                        Visibility::Public,
                        r.adornment,
                        !r.defaulted,
                        Qualifiers::default(),
                        Some(TypeName::Role),
                        None,
                    );
                    role_nodes.push(IfaceNode::Param(i));
                }
            }
        }

        // Public parameters, in clause order.
        let mut interface = b.declare_public(&decl.public);
        if decl.is_message {
            role_nodes.extend(interface);
            interface = role_nodes;
        }
        let public_order: Vec<usize> = iface_params(&interface);

        // Privates.
        for p in &decl.privates {
            let id = canonical_param_name(p);
            if b.by_name.contains_key(&id) {
                b.diagnostics.push(Diagnostic::warning(
                    file,
                    p.span.line,
                    p.span.col,
                    codes::SHADOWED_PRIVATE,
                    format!("private parameter `{id}` shadows a public parameter; ignoring the private"),
                ));
                continue;
            }
            b.declare(
                id,
                Visibility::Private,
                Adornment::Unspecified,
                false,
                p.qualifiers,
                p.type_constraint().cloned(),
                p.abbreviation.as_ref().map(|a| a.text.clone()),
            );
        }

        if decl.is_message {
            b.inline_message(decl, self, true);
        } else {
            for reference in &decl.body {
                match reference {
                    Reference::Message(m) => {
                        // An inline message whose name matches a loaded
                        // elementary protocol re-enacts that schema.
                        let target = m.name.text();
                        let is_external = self
                            .decls
                            .get(&target)
                            .map(|(_, d)| d.is_message)
                            .unwrap_or(false)
                            && target != name;
                        if is_external {
                            b.message_reference(m, self);
                        } else {
                            b.inline_message(m, self, false);
                        }
                    }
                    Reference::Call { target, arguments, span } => {
                        b.call_reference(target.text(), arguments, *span, self);
                    }
                }
            }
        }

        b.infer_unspecified();
        let key_model = b.key_model();
        let completion = completion_formula(decl);
        let initiator_candidates = b.initiator_candidates();
        self.diagnostics.append(&mut b.diagnostics);

        ResolvedProtocol {
            name,
            is_message: decl.is_message,
            params: b.params,
            public_order,
            interface,
            schemas: b.schemas,
            identity: b.identity,
            key_model,
            completion,
            late_refs: b.late_refs,
            initiator_candidates,
        }
    }
}

fn iface_params(nodes: &[IfaceNode]) -> Vec<usize> {
    let mut out = Vec::new();
    for n in nodes {
        match n {
            IfaceNode::Param(i) => out.push(*i),
            IfaceNode::Or(ops) => {
                for op in ops {
                    out.extend(iface_params(op));
                }
            }
        }
    }
    out
}

struct Builder {
    file: String,
    name: String,
    params: Vec<ParamInfo>,
    by_name: BTreeMap<String, usize>,
    public_bases: BTreeSet<String>,
    schemas: Vec<ResolvedSchema>,
    identity: BTreeMap<(String, String), usize>,
    late_refs: Vec<LateRef>,
    instance_counts: BTreeMap<String, usize>,
    diagnostics: Vec<Diagnostic>,
}

impl Builder {
    #[allow(clippy::too_many_arguments)]
    fn declare(
        &mut self,
        id: String,
        visibility: Visibility,
        adornment: Adornment,
        explicit: bool,
        qualifiers: Qualifiers,
        type_hint: Option<TypeName>,
        alias: Option<String>,
    ) -> usize {
        let idx = self.params.len();
        self.params.push(ParamInfo {
            id: id.clone(),
            visibility,
            adornment,
            explicit,
            qualifiers,
            type_hint,
            aliases: alias.into_iter().collect(),
        });
        self.by_name.insert(id, idx);
        idx
    }

    fn declare_public(&mut self, expr: &ParamExpr) -> Vec<IfaceNode> {
        let mut nodes = Vec::new();
        for clause in &expr.clauses {
            nodes.push(self.declare_public_clause(clause));
        }
        nodes
    }

    fn declare_public_clause(&mut self, clause: &Clause) -> IfaceNode {
        match clause {
            Clause::Param(p) => {
                let mut id = canonical_param_name(p);
                // Trailing aliases reuse a base name across parameters, as in
                // `Propose(R), Propose(E)`; the alias is the working name.
                if let Some(ab) = &p.abbreviation {
                    if ab.offset.is_none() && !self.public_bases.insert(p.name.text()) {
                        self.diagnostics.push(Diagnostic::warning(
                            &self.file,
                            p.span.line,
                            p.span.col,
                            codes::DUPLICATE_PARAMETER,
                            format!(
                                "parameter name `{}` appears more than once; parameters are distinguished by their aliases",
                                p.name.text()
                            ),
                        ));
                    }
                }
                if self.by_name.contains_key(&id) {
                    self.diagnostics.push(Diagnostic::warning(
                        &self.file,
                        p.span.line,
                        p.span.col,
                        codes::DUPLICATE_PARAMETER,
                        format!("parameter name `{id}` appears more than once"),
                    ));
                    id = format!("{id}#{}", self.params.len());
                }
                let alias = p
                    .abbreviation
                    .as_ref()
                    .map(|a| a.text.clone())
                    .filter(|a| *a != id && !self.by_name.contains_key(a));
                let idx = self.declare(
                    id,
                    Visibility::Public,
                    p.adornment,
                    !p.defaulted,
                    p.qualifiers,
                    p.type_constraint().cloned(),
                    alias,
                );
                IfaceNode::Param(idx)
            }
            Clause::Or(exprs) => IfaceNode::Or(
                exprs
                    .iter()
                    .map(|e| self.declare_public(e))
                    .collect(),
            ),
        }
    }

    /// Resolve a name used by a message payload or reference argument to a
    /// composition parameter, auto-declaring it when missing.
    fn lookup_or_auto(&mut self, name: &str, span: lang::Span) -> usize {
        if let Some(&i) = self.by_name.get(name) {
            return i;
        }
        if let Some(i) = self
            .params
            .iter()
            .position(|p| p.aliases.iter().any(|a| a == name))
        {
            return i;
        }
        // Singular reference to a declared set parameter (`protocol` for a
        // set parameter `protocols`).
        let plural = format!("{name}s");
        if let Some(&i) = self.by_name.get(&plural) {
            if self.params[i].qualifiers.set {
                self.diagnostics.push(Diagnostic::warning(
                    &self.file,
                    span.line,
                    span.col,
                    codes::SET_SINGULAR,
                    format!("`{name}` refers to the set parameter `{plural}`"),
                ));
                return i;
            }
        }
        self.diagnostics.push(Diagnostic::warning(
            &self.file,
            span.line,
            span.col,
            codes::UNDECLARED_PARAMETER,
            format!("parameter `{name}` is not declared in `{}`; treating it as private", self.name),
        ));
        self.declare(
            name.to_string(),
            Visibility::Auto,
            Adornment::Unspecified,
            false,
            Qualifiers::default(),
            None,
            None,
        )
    }

    fn resolve_constraints(&mut self, constraints: &[Constraint], span: lang::Span) -> Vec<SlotConstraint> {
        constraints
            .iter()
            .map(|c| match c {
                Constraint::Type(t) => SlotConstraint::Type(t.clone()),
                Constraint::Relation { op, target } => SlotConstraint::Relation {
                    op: *op,
                    target: match target {
                        ConstraintTarget::Name(n) => {
                            ResolvedTarget::Param(self.lookup_or_auto(&n.text(), span))
                        }
                        ConstraintTarget::Str(s) => ResolvedTarget::Str(s.clone()),
                        ConstraintTarget::Int(i) => ResolvedTarget::Int(*i),
                        ConstraintTarget::Dec(d) => ResolvedTarget::Dec(*d),
                    },
                },
            })
            .collect()
    }

    /// Declare a schema from an inline message. `standalone` marks elementary
    /// message protocols, whose schema id is the bare protocol name.
    fn inline_message(&mut self, m: &ProtocolDecl, _res: &mut Resolver, standalone: bool) {
        let id = if standalone {
            m.name.text()
        } else {
            format!("{}/{}", self.name, m.name.text())
        };
        let sender_ref = m.sender.as_ref().expect("message has a sender");
        let sender = self.lookup_role(&sender_ref.name.text(), sender_ref.span, TypeName::Role);
        let sender_adornment = sender_ref.adornment;
        // A bare role at the message site stays strict when the protocol
        // declaration adorned the parameter explicitly.
        let sender_defaulted = sender_ref.defaulted && !self.params[sender].explicit;
        let recipients: Vec<RecipientSlot> = m
            .recipients
            .iter()
            .map(|r| {
                let param = self.lookup_role(&r.name.text(), r.span, TypeName::Role);
                RecipientSlot {
                    param,
                    adornment: r.adornment,
                    defaulted: r.defaulted && !self.params[param].explicit,
                }
            })
            .collect();

        let mut payload = Vec::new();
        let mut slot_params = Vec::new();
        for p in m.public.params() {
            let idx = self.lookup_or_auto(&canonical_param_name(p), p.span);
            let constraints = self.resolve_constraints(&p.constraints, p.span);
            if self.params[idx].type_hint.is_none() {
                if let Some(t) = p.type_constraint() {
                    self.params[idx].type_hint = Some(t.clone());
                }
            }
            let info = &self.params[idx];
            payload.push(PayloadSlot {
                name: self.params[idx].id.clone(),
                adornment: p.adornment,
                key: p.qualifiers.key || info.qualifiers.key,
                local: p.qualifiers.local || info.qualifiers.local,
                set: p.qualifiers.set || info.qualifiers.set,
                opt: p.adornment == Adornment::Opt,
                constraints,
            });
            slot_params.push(idx);
        }
        self.schemas.push(ResolvedSchema {
            id,
            declaring_protocol: self.name.clone(),
            sender,
            sender_adornment,
            sender_defaulted,
            recipients,
            payload,
            slot_params,
        });
    }

    fn lookup_role(&mut self, name: &str, span: lang::Span, ty: TypeName) -> usize {
        let idx = self.lookup_or_auto(name, span);
        if self.params[idx].type_hint.is_none() {
            self.params[idx].type_hint = Some(ty);
        }
        idx
    }

    /// `B -> K: Transfer[...]` where Transfer is a loaded elementary message
    /// protocol: re-enact that schema with positional substitution.
    fn message_reference(&mut self, m: &ProtocolDecl, res: &mut Resolver) {
        let target_name = m.name.text();
        if !res.resolve_protocol(&target_name) {
            self.inline_message(m, res, false);
            return;
        }
        let target = res.done[&target_name].clone();
        let schema = &target.schemas[0];
        // Positional interface of an elementary message: sender, recipients,
        // then payload.
        let span = m.span;
        let mut args: Vec<(usize, Adornment)> = Vec::new();
        let sref = m.sender.as_ref().expect("message has a sender");
        args.push((self.lookup_role(&sref.name.text(), sref.span, TypeName::Role), sref.adornment));
        for r in &m.recipients {
            args.push((self.lookup_role(&r.name.text(), r.span, TypeName::Role), r.adornment));
        }
        for p in m.public.params() {
            let idx = self.lookup_or_auto(&canonical_param_name(p), p.span);
            args.push((idx, p.adornment));
        }
        let expected = 1 + schema.recipients.len() + schema.payload.len();
        if args.len() != expected {
            self.diagnostics.push(Diagnostic::error(
                &self.file,
                span.line,
                span.col,
                codes::ARITY_MISMATCH,
                format!(
                    "message reference `{target_name}` has {} positions, expected {expected}",
                    args.len()
                ),
            ));
            return;
        }
        let instance = self.instance_label(&target_name);
        let mut map: BTreeMap<usize, usize> = BTreeMap::new();
        let mut ai = args.iter();
        let (s_idx, _) = *ai.next().unwrap();
        map.insert(schema.sender, s_idx);
        for r in &schema.recipients {
            map.insert(r.param, ai.next().unwrap().0);
        }
        for (pos, slot) in schema.slot_params.iter().enumerate() {
            let (arg_idx, arg_ad) = *ai.next().unwrap();
            self.check_adornment_pair(arg_idx, arg_ad, schema.payload[pos].adornment, span);
            map.entry(*slot).or_insert(arg_idx);
        }
        self.import_schemas(&target, &instance, &map);
        // Written adornments at the reference site override the role and
        // payload markers of the re-enacted schema for this composition.
        let imported = self.schemas.last_mut().expect("schema just imported");
        if let Some(sref) = &m.sender {
            if !sref.defaulted {
                imported.sender_adornment = sref.adornment;
                imported.sender_defaulted = false;
            }
        }
        for (i, r) in m.recipients.iter().enumerate() {
            if !r.defaulted {
                if let Some(slot) = imported.recipients.get_mut(i) {
                    slot.adornment = r.adornment;
                    slot.defaulted = false;
                }
            }
        }
        for (pos, site) in m.public.params().iter().enumerate() {
            if site.adornment != Adornment::Unspecified {
                if let Some(slot) = imported.payload.get_mut(pos) {
                    slot.adornment = site.adornment;
                }
            }
        }
    }

    fn call_reference(
        &mut self,
        target_name: String,
        arguments: &ParamExpr,
        span: lang::Span,
        res: &mut Resolver,
    ) {
        // A protocol-typed parameter takes precedence: late binding.
        if let Some(&idx) = self.by_name.get(&target_name) {
            if self.params[idx].is_protocol() {
                let (nodes, adornments) = self.arg_nodes(arguments, span);
                self.late_refs.push(LateRef {
                    target_param: idx,
                    args: nodes,
                    arg_adornments: adornments,
                });
                return;
            }
        }
        if !res.decls.contains_key(&target_name) {
            self.diagnostics.push(Diagnostic::error(
                &self.file,
                span.line,
                span.col,
                codes::UNKNOWN_REFERENCE,
                format!("reference to unknown protocol `{target_name}`"),
            ));
            return;
        }
        if !res.resolve_protocol(&target_name) {
            return;
        }
        let target = res.done[&target_name].clone();
        let (arg_nodes, _) = self.arg_nodes(arguments, span);
        let pairs = match match_interface(&arg_nodes, arguments, &target, self, span) {
            Ok(p) => p,
            Err(d) => {
                self.diagnostics.push(d);
                return;
            }
        };
        let instance = self.instance_label(&target_name);
        let mut map: BTreeMap<usize, usize> = BTreeMap::new();
        for (target_idx, arg_idx, arg_ad) in pairs {
            self.check_adornment_pair(arg_idx, arg_ad, target.params[target_idx].adornment, span);
            map.insert(target_idx, arg_idx);
        }
        self.import_schemas(&target, &instance, &map);
    }

    /// Adornment compatibility between a composition parameter and a
    /// constituent position it is passed to. Only explicit adornments
    /// conflict; `any` and defaulted markers unify with anything.
    fn check_adornment_pair(
        &mut self,
        arg_idx: usize,
        ref_site: Adornment,
        target_decl: Adornment,
        span: lang::Span,
    ) {
        let produces = matches!(target_decl, Adornment::Out);
        let param = &self.params[arg_idx];
        let conflict = if produces
            && param.visibility == Visibility::Public
            && param.explicit
            && param.adornment == Adornment::In
        {
            // The reference binds a parameter the composition receives from
            // outside.
            true
        } else {
            matches!(
                (ref_site, target_decl),
                (Adornment::In, Adornment::Out) | (Adornment::Out, Adornment::In)
            )
        };
        if conflict {
            let id = self.params[arg_idx].id.clone();
            self.diagnostics.push(Diagnostic::error(
                &self.file,
                span.line,
                span.col,
                codes::ADORNMENT_CONFLICT,
                format!("parameter `{id}` cannot be both external and bound by the reference"),
            ));
        }
    }

    fn arg_nodes(&mut self, arguments: &ParamExpr, span: lang::Span) -> (Vec<IfaceNode>, Vec<Adornment>) {
        let mut adornments = Vec::new();
        let nodes = self.arg_nodes_inner(arguments, span);
        for clause in &arguments.clauses {
            adornments.push(match clause {
                Clause::Param(p) => p.adornment,
                Clause::Or(_) => Adornment::Unspecified,
            });
        }
        (nodes, adornments)
    }

    fn arg_nodes_inner(&mut self, arguments: &ParamExpr, span: lang::Span) -> Vec<IfaceNode> {
        let mut nodes = Vec::new();
        for clause in &arguments.clauses {
            match clause {
                Clause::Param(p) => {
                    let idx = self.lookup_or_auto(&canonical_param_name(p), p.span);
                    nodes.push(IfaceNode::Param(idx));
                }
                Clause::Or(exprs) => {
                    nodes.push(IfaceNode::Or(
                        exprs
                            .iter()
                            .map(|e| self.arg_nodes_inner(e, span))
                            .collect(),
                    ));
                }
            }
        }
        nodes
    }

    fn instance_label(&mut self, target: &str) -> String {
        let n = self.instance_counts.entry(target.to_string()).or_insert(0);
        let label = if *n == 0 {
            target.to_string()
        } else {
            format!("{target}#{n}")
        };
        *n += 1;
        label
    }

    /// Copy the target's schemas into this composition, remapping payload
    /// positions through `map`; unmapped constituent parameters become hidden
    /// locals of the composition.
    fn import_schemas(
        &mut self,
        target: &ResolvedProtocol,
        instance: &str,
        map: &BTreeMap<usize, usize>,
    ) {
        let mut full: BTreeMap<usize, usize> = map.clone();
        let local_for = |b: &mut Builder, t_idx: usize| -> usize {
            let info = &target.params[t_idx];
            let id = format!("{instance}/{}", info.id);
            let adornment = info.adornment;
            let quals = info.qualifiers;
            let hint = info.type_hint.clone();
            b.declare(id, Visibility::Private, adornment, false, quals, hint, None)
        };
        for (t_idx, t_info) in target.params.iter().enumerate() {
            let mapped = match full.get(&t_idx) {
                Some(&m) => m,
                None => {
                    let m = local_for(self, t_idx);
                    full.insert(t_idx, m);
                    m
                }
            };
            self.identity
                .insert((instance.to_string(), t_info.id.clone()), mapped);
            // Propagate role/protocol type hints outward.
            if self.params[mapped].type_hint.is_none() {
                if let Some(t) = &target.params[t_idx].type_hint {
                    self.params[mapped].type_hint = Some(t.clone());
                }
            }
        }
        // Transitive identities from the target's own compositions.
        for ((sub, param), t_idx) in &target.identity {
            if let Some(&m) = full.get(t_idx) {
                let key = (sub.clone(), param.clone());
                if self.identity.contains_key(&key) {
                    self.identity.insert((format!("{instance}/{sub}"), param.clone()), m);
                } else {
                    self.identity.insert(key, m);
                }
            }
        }
        for schema in &target.schemas {
            let mut imported = schema.clone();
            imported.sender = full[&schema.sender];
            // External-boundness of roles is governed by this composition's
            // own declaration.
            imported.sender_defaulted = !self.params[imported.sender].explicit;
            imported.recipients = schema
                .recipients
                .iter()
                .map(|r| RecipientSlot {
                    param: full[&r.param],
                    adornment: r.adornment,
                    defaulted: r.adornment != Adornment::Out
                        && !self.params[full[&r.param]].explicit,
                })
                .collect();
            imported.slot_params = schema.slot_params.iter().map(|s| full[s]).collect();
            for slot in &mut imported.payload {
                for c in &mut slot.constraints {
                    if let SlotConstraint::Relation {
                        target: ResolvedTarget::Param(p),
                        ..
                    } = c
                    {
                        *p = full[p];
                    }
                }
            }
            self.schemas.push(imported);
        }
        for late in &target.late_refs {
            let remap_nodes = |nodes: &[IfaceNode]| -> Vec<IfaceNode> {
                fn walk(nodes: &[IfaceNode], full: &BTreeMap<usize, usize>) -> Vec<IfaceNode> {
                    nodes
                        .iter()
                        .map(|n| match n {
                            IfaceNode::Param(i) => IfaceNode::Param(full[i]),
                            IfaceNode::Or(ops) => {
                                IfaceNode::Or(ops.iter().map(|o| walk(o, full)).collect())
                            }
                        })
                        .collect()
                }
                walk(nodes, &full)
            };
            self.late_refs.push(LateRef {
                target_param: full[&late.target_param],
                args: remap_nodes(&late.args),
                arg_adornments: late.arg_adornments.clone(),
            });
        }
    }

    /// Concrete adornments for reference-site (unspecified) positions: a
    /// parameter that is produced elsewhere or supplied externally is `in`;
    /// otherwise the schema binds it.
    fn infer_unspecified(&mut self) {
        let mut available: BTreeSet<usize> = BTreeSet::new();
        for (i, p) in self.params.iter().enumerate() {
            let external = p.visibility == Visibility::Public
                && matches!(p.adornment, Adornment::In | Adornment::Any);
            if external {
                available.insert(i);
            }
        }
        for s in &self.schemas {
            for (pos, slot) in s.payload.iter().enumerate() {
                if matches!(slot.adornment, Adornment::Out | Adornment::Any) {
                    available.insert(s.slot_params[pos]);
                }
            }
            if s.sender_adornment == Adornment::Out {
                available.insert(s.sender);
            }
            for r in &s.recipients {
                if r.adornment == Adornment::Out {
                    available.insert(r.param);
                }
            }
        }
        for s in &mut self.schemas {
            for (pos, slot) in s.payload.iter_mut().enumerate() {
                if slot.adornment == Adornment::Unspecified {
                    slot.adornment = if available.contains(&s.slot_params[pos]) {
                        Adornment::In
                    } else {
                        Adornment::Out
                    };
                }
            }
        }
    }

    fn key_model(&mut self) -> KeyModel {
        let mut km = KeyModel::default();
        for p in &self.params {
            if p.qualifiers.key && !p.qualifiers.local {
                km.global_keys.push(p.id.clone());
            }
        }
        let mut seen_locals: Vec<String> = Vec::new();
        for p in &self.params {
            if p.qualifiers.key && p.qualifiers.local {
                let mut scope = km.global_keys.clone();
                scope.extend(seen_locals.clone());
                seen_locals.push(p.id.clone());
                km.local_keys.push(LocalKey {
                    name: p.id.clone(),
                    scope,
                });
            }
        }
        for s in &self.schemas {
            let out_locals: Vec<String> = s
                .payload
                .iter()
                .filter(|slot| slot.key && slot.local && slot.adornment == Adornment::Out)
                .map(|slot| slot.name.clone())
                .collect();
            if out_locals.len() > 1 {
                km.hierarchy.push(out_locals);
            }
            // Invertible pairs: two global keys bound together by one schema.
            let globals: Vec<(usize, &PayloadSlot)> = s
                .payload
                .iter()
                .enumerate()
                .filter(|(_, slot)| slot.key && !slot.local)
                .collect();
            for (i, a) in &globals {
                for (j, b) in &globals {
                    if i >= j {
                        continue;
                    }
                    let pair_ok = (a.adornment == Adornment::In && b.adornment == Adornment::Out)
                        || (a.adornment == Adornment::Out && b.adornment == Adornment::In);
                    if pair_ok {
                        let pa = self.params[s.slot_params[*i]].id.clone();
                        let pb = self.params[s.slot_params[*j]].id.clone();
                        if !km.invertible.contains(&(pa.clone(), pb.clone())) {
                            km.invertible.push((pa, pb));
                        }
                    }
                }
            }
        }
        km
    }

    fn initiator_candidates(&self) -> Vec<usize> {
        let mut out = BTreeSet::new();
        for s in &self.schemas {
            let keys_out = s
                .payload
                .iter()
                .filter(|slot| slot.key)
                .all(|slot| matches!(slot.adornment, Adornment::Out | Adornment::Any));
            let inputs_external = s.payload.iter().enumerate().all(|(pos, slot)| {
                if slot.adornment != Adornment::In {
                    return true;
                }
                let p = &self.params[s.slot_params[pos]];
                p.visibility == Visibility::Public
                    && matches!(p.adornment, Adornment::In | Adornment::Any)
            });
            if keys_out || inputs_external {
                out.insert(s.sender);
            }
        }
        out.into_iter().collect()
    }
}

/// Pure pairing of reference-argument nodes against a target interface, for
/// late-bound references resolved at enactment time. The interface must match
/// the reference arity exactly; a mismatch is a runtime error at the step
/// that bound the protocol parameter. Returns (target param, argument param)
/// pairs.
pub fn match_late_interface(
    args: &[IfaceNode],
    target: &ResolvedProtocol,
) -> Result<Vec<(usize, usize)>, String> {
    fn walk(
        arg: &IfaceNode,
        tgt: &IfaceNode,
        pairs: &mut Vec<(usize, usize)>,
    ) -> Result<(), String> {
        match (arg, tgt) {
            (IfaceNode::Param(a), IfaceNode::Param(t)) => {
                pairs.push((*t, *a));
                Ok(())
            }
            (IfaceNode::Or(a_ops), IfaceNode::Or(t_ops)) if a_ops.len() == t_ops.len() => {
                for (a_expr, t_expr) in a_ops.iter().zip(t_ops) {
                    if a_expr.len() != t_expr.len() {
                        return Err("clause shape mismatch".into());
                    }
                    for (a, t) in a_expr.iter().zip(t_expr) {
                        walk(a, t, pairs)?;
                    }
                }
                Ok(())
            }
            _ => Err("clause shape mismatch".into()),
        }
    }
    if args.len() != target.interface.len() {
        return Err(format!(
            "interface arity mismatch: {} arguments, {} positions",
            args.len(),
            target.interface.len()
        ));
    }
    let mut pairs = Vec::new();
    for (a, t) in args.iter().zip(&target.interface) {
        walk(a, t, &mut pairs)?;
    }
    Ok(pairs)
}

/// Match reference arguments against a target's positional interface.
///
/// Equal arity matches positionally. Shorter argument lists align on name
/// anchors (same name or alias, order preserving); leftover target positions
/// between anchors are skipped and stay internal to the constituent.
fn match_interface(
    args: &[IfaceNode],
    source: &ParamExpr,
    target: &ResolvedProtocol,
    b: &mut Builder,
    span: lang::Span,
) -> Result<Vec<(usize, usize, Adornment)>, Diagnostic> {
    let iface = &target.interface;
    if args.len() > iface.len() {
        return Err(Diagnostic::error(
            &b.file,
            span.line,
            span.col,
            codes::ARITY_MISMATCH,
            format!(
                "reference to `{}` passes {} arguments, interface has {} positions",
                target.name,
                args.len(),
                iface.len()
            ),
        ));
    }
    let arg_ads: Vec<Adornment> = source
        .clauses
        .iter()
        .map(|c| match c {
            Clause::Param(p) => p.adornment,
            Clause::Or(_) => Adornment::Unspecified,
        })
        .collect();

    let alignment: Vec<(usize, usize)> = if args.len() == iface.len() {
        (0..args.len()).map(|i| (i, i)).collect()
    } else {
        align_by_name(args, iface, b, target)
    };
    if alignment.len() != args.len() {
        return Err(Diagnostic::error(
            &b.file,
            span.line,
            span.col,
            codes::ARITY_MISMATCH,
            format!(
                "could not align {} arguments with `{}`'s interface",
                args.len(),
                target.name
            ),
        ));
    }

    let mut pairs = Vec::new();
    for (ai, ti) in alignment {
        pair_nodes(
            &args[ai],
            &iface[ti],
            arg_ads.get(ai).copied().unwrap_or(Adornment::Unspecified),
            target,
            b,
            span,
            &mut pairs,
        )?;
    }
    Ok(pairs)
}

fn pair_nodes(
    arg: &IfaceNode,
    tgt: &IfaceNode,
    arg_ad: Adornment,
    target: &ResolvedProtocol,
    b: &mut Builder,
    span: lang::Span,
    pairs: &mut Vec<(usize, usize, Adornment)>,
) -> Result<(), Diagnostic> {
    match (arg, tgt) {
        (IfaceNode::Param(a), IfaceNode::Param(t)) => {
            pairs.push((*t, *a, arg_ad));
            Ok(())
        }
        (IfaceNode::Or(a_ops), IfaceNode::Or(t_ops)) => {
            if a_ops.len() != t_ops.len() {
                return Err(Diagnostic::error(
                    &b.file,
                    span.line,
                    span.col,
                    codes::CLAUSE_SHAPE,
                    format!(
                        "disjunction passed to `{}` has {} branches, interface clause has {}",
                        target.name,
                        a_ops.len(),
                        t_ops.len()
                    ),
                ));
            }
            for (a_expr, t_expr) in a_ops.iter().zip(t_ops) {
                if a_expr.len() != t_expr.len() {
                    return Err(Diagnostic::error(
                        &b.file,
                        span.line,
                        span.col,
                        codes::CLAUSE_SHAPE,
                        format!("clause shape mismatch in reference to `{}`", target.name),
                    ));
                }
                for (a, t) in a_expr.iter().zip(t_expr) {
                    pair_nodes(a, t, Adornment::Unspecified, target, b, span, pairs)?;
                }
            }
            Ok(())
        }
        _ => Err(Diagnostic::error(
            &b.file,
            span.line,
            span.col,
            codes::CLAUSE_SHAPE,
            format!("clause shape mismatch in reference to `{}`", target.name),
        )),
    }
}

/// Order-preserving alignment: anchor arguments to interface positions whose
/// parameter has the same name (or alias), then fill the gaps positionally.
fn align_by_name(
    args: &[IfaceNode],
    iface: &[IfaceNode],
    b: &Builder,
    target: &ResolvedProtocol,
) -> Vec<(usize, usize)> {
    let arg_name = |n: &IfaceNode| -> Option<String> {
        match n {
            IfaceNode::Param(i) => Some(b.params[*i].id.clone()),
            IfaceNode::Or(ops) => ops
                .first()
                .and_then(|o| o.first())
                .and_then(|n| match n {
                    IfaceNode::Param(i) => Some(b.params[*i].id.clone()),
                    _ => None,
                }),
        }
    };
    let tgt_matches = |n: &IfaceNode, name: &str| -> bool {
        match n {
            IfaceNode::Param(i) => {
                let p = &target.params[*i];
                p.id == name || p.aliases.iter().any(|a| a == name)
            }
            IfaceNode::Or(ops) => ops
                .first()
                .and_then(|o| o.first())
                .map(|n| match n {
                    IfaceNode::Param(i) => {
                        let p = &target.params[*i];
                        p.id == name || p.aliases.iter().any(|a| a == name)
                    }
                    _ => false,
                })
                .unwrap_or(false),
        }
    };

    let mut anchors: Vec<(usize, usize)> = Vec::new();
    let mut j0 = 0usize;
    for (i, a) in args.iter().enumerate() {
        if let Some(name) = arg_name(a) {
            if let Some(j) = (j0..iface.len()).find(|&j| tgt_matches(&iface[j], &name)) {
                anchors.push((i, j));
                j0 = j + 1;
            }
        }
    }

    let mut alignment = Vec::new();
    let mut prev = (0usize, 0usize);
    let mut anchor_iter = anchors.iter().peekable();
    loop {
        let (end_a, end_t, anchor) = match anchor_iter.peek() {
            Some(&&(a, t)) => (a, t, true),
            None => (args.len(), iface.len(), false),
        };
        // Positional fill between anchors.
        let span_a = end_a - prev.0;
        let span_t = end_t - prev.1;
        if span_a > span_t {
            return Vec::new(); // more arguments than positions: mismatch
        }
        for k in 0..span_a {
            alignment.push((prev.0 + k, prev.1 + k));
        }
        if anchor {
            alignment.push((end_a, end_t));
            prev = (end_a + 1, end_t + 1);
            anchor_iter.next();
        } else {
            break;
        }
    }
    alignment
}

#[cfg(test)]
mod tests;
