//! Canonical text form.
//!
//! Shared-adornment groups are reconstructed (consecutive parameters with the
//! same markers print as one comma run), and a bare-led item directly after
//! an open group is parenthesized so it cannot be absorbed into that group
//! when reparsed. Printing therefore normalizes a document in one pass:
//! print(parse(print(parse(t)))) == print(parse(t)).

use super::ast::*;

pub fn print(spec: &Specification) -> String {
    let mut out = String::new();
    for (name, value) in &spec.preamble {
        out.push_str(name);
        out.push_str(": ");
        out.push_str(value);
        out.push('\n');
    }
    if !spec.preamble.is_empty() {
        out.push('\n');
    }
    for (i, decl) in spec.declarations.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        print_decl(&mut out, decl, 0);
        out.push('\n');
    }
    out
}

fn print_decl(out: &mut String, decl: &ProtocolDecl, indent: usize) {
    let pad = "  ".repeat(indent);
    if decl.is_message {
        out.push_str(&pad);
        out.push_str(&message_head(decl));
        return;
    }
    out.push_str(&pad);
    out.push_str(&decl.name.text());
    out.push('(');
    out.push_str(&param_expr(&decl.public));
    out.push_str(") {\n");
    if !decl.privates.is_empty() {
        out.push_str(&pad);
        out.push_str("  private (");
        let clauses: Vec<Clause> = decl
            .privates
            .iter()
            .map(|p| Clause::Param(p.clone()))
            .collect();
        out.push_str(&print_clauses(&clauses));
        out.push_str(")\n");
    }
    for reference in &decl.body {
        match reference {
            Reference::Call { target, arguments, .. } => {
                out.push_str(&pad);
                out.push_str("  ");
                out.push_str(&target.text());
                out.push('(');
                out.push_str(&param_expr(arguments));
                out.push_str(")\n");
            }
            Reference::Message(m) => {
                print_decl(out, m, indent + 1);
                out.push('\n');
            }
        }
    }
    out.push_str(&pad);
    out.push('}');
}

fn message_head(decl: &ProtocolDecl) -> String {
    let mut s = String::new();
    if let Some(sender) = &decl.sender {
        s.push_str(&role_ref(sender));
        s.push_str(" -> ");
    }
    let recips: Vec<String> = decl.recipients.iter().map(role_ref).collect();
    s.push_str(&recips.join(", "));
    s.push_str(": ");
    s.push_str(&decl.name.text());
    s.push('[');
    s.push_str(&param_expr(&decl.public));
    s.push(']');
    s
}

fn role_ref(r: &RoleRef) -> String {
    match (r.defaulted, r.adornment.keyword()) {
        (false, Some(kw)) => format!("{kw} {}", r.name.text()),
        _ => r.name.text(),
    }
}

pub fn param_expr(expr: &ParamExpr) -> String {
    print_clauses(&expr.clauses)
}

/// True when the parameter would print without any leading marker and could
/// therefore join a preceding open group on reparse.
fn bare_led(p: &Parameter) -> bool {
    (p.defaulted || p.adornment == Adornment::Unspecified) && !p.qualifiers.any()
}

fn same_group(a: &Parameter, b: &Parameter) -> bool {
    a.adornment == b.adornment
        && a.defaulted == b.defaulted
        && a.qualifiers == b.qualifiers
        && a.constraints == b.constraints
}

fn print_clauses(clauses: &[Clause]) -> String {
    let mut parts: Vec<String> = Vec::new();
    let mut prev_open_group = false;
    let mut i = 0;
    while i < clauses.len() {
        match &clauses[i] {
            Clause::Param(first) => {
                let mut members = vec![first];
                while let Some(Clause::Param(next)) = clauses.get(i + members.len()) {
                    if same_group(first, next) {
                        members.push(next);
                    } else {
                        break;
                    }
                }
                i += members.len();
                let mut s = group_text(&members);
                if prev_open_group && bare_led(first) && !parts.is_empty() {
                    s = format!("({s})");
                    prev_open_group = false;
                } else {
                    prev_open_group = first.constraints.is_empty();
                }
                parts.push(s);
            }
            Clause::Or(operands) => {
                let mut s = or_text(operands);
                let first_bare = operands
                    .first()
                    .and_then(|e| e.clauses.first())
                    .map(|c| matches!(c, Clause::Param(p) if bare_led(p)))
                    .unwrap_or(false);
                if prev_open_group && first_bare && !parts.is_empty() {
                    s = format!("({s})");
                }
                prev_open_group = false;
                parts.push(s);
                i += 1;
            }
        }
    }
    parts.join(", ")
}

/// One shared-marker run: markers from the first member, names comma joined,
/// constraints once at the end.
fn group_text(members: &[&Parameter]) -> String {
    let first = members[0];
    let mut s = String::new();
    if !first.defaulted {
        if let Some(kw) = first.adornment.keyword() {
            s.push_str(kw);
            s.push(' ');
        }
    }
    if first.qualifiers.local {
        s.push_str("local ");
    }
    if first.qualifiers.key {
        s.push_str("key ");
    }
    if first.qualifiers.set {
        s.push_str("set ");
    }
    let names: Vec<String> = members.iter().map(|p| param_name(p)).collect();
    s.push_str(&names.join(", "));
    if !first.constraints.is_empty() {
        s.push_str(": ");
        s.push_str(&constraints_text(&first.constraints));
    }
    s
}

fn or_text(operands: &[ParamExpr]) -> String {
    let parts: Vec<String> = operands
        .iter()
        .map(|e| {
            if e.clauses.len() == 1 {
                if let Clause::Param(p) = &e.clauses[0] {
                    return parameter(p);
                }
            }
            format!("({})", print_clauses(&e.clauses))
        })
        .collect();
    parts.join(" or ")
}

pub fn parameter(p: &Parameter) -> String {
    group_text(&[p])
}

fn constraints_text(constraints: &[Constraint]) -> String {
    let mut s = String::new();
    for (i, c) in constraints.iter().enumerate() {
        if i > 0 {
            let prev_type = matches!(constraints[i - 1], Constraint::Type(_));
            let this_rel = matches!(c, Constraint::Relation { .. });
            if !(prev_type && this_rel) {
                // `role=r2` style glues a value constraint to its type;
                // anything else separates with a semicolon.
                s.push_str("; ");
            }
        }
        s.push_str(&constraint(c));
    }
    s
}

fn param_name(p: &Parameter) -> String {
    match &p.abbreviation {
        None => p.name.text(),
        Some(ab) => match ab.offset {
            Some(off) => {
                let local = &p.name.local;
                let before = &local[..off];
                let after = &local[off + ab.text.len()..];
                let shown = format!("{before}({}){after}", ab.text);
                match &p.name.prefix {
                    Some(pre) => format!("{pre}:{shown}"),
                    None => shown,
                }
            }
            None => format!("{}({})", p.name.text(), ab.text),
        },
    }
}

fn constraint(c: &Constraint) -> String {
    match c {
        Constraint::Type(t) => match t {
            TypeName::Role => "role".into(),
            TypeName::Protocol => "protocol".into(),
            TypeName::Name(n) => n.text(),
        },
        Constraint::Relation { op, target } => {
            let t = match target {
                ConstraintTarget::Name(n) => n.text(),
                ConstraintTarget::Str(s) => format!("{s:?}"),
                ConstraintTarget::Int(i) => i.to_string(),
                ConstraintTarget::Dec(d) => {
                    if d.fract() == 0.0 {
                        format!("{d:.1}")
                    } else {
                        d.to_string()
                    }
                }
            };
            format!("{}{}", op.symbol(), t)
        }
    }
}
