//! Prefix expansion and alias registration.

use super::ast::*;
use super::parser::RECOGNIZED_SCHEMES;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExpandError {
    #[error("unknown prefix `{0}`")]
    UnknownPrefix(String),
    #[error("ambiguous abbreviation `{0}` (candidates: {1}, {2})")]
    AmbiguousAlias(String, String, String),
}

/// Rewrite every prefixed name to its expanded form using the preamble, and
/// validate abbreviation uniqueness per declaration. Unprefixed names and
/// absolute IRIs pass through unchanged.
pub fn expand_names(spec: &Specification) -> Result<Specification, ExpandError> {
    let mut out = spec.clone();
    for decl in &mut out.declarations {
        expand_decl(decl, spec)?;
    }
    Ok(out)
}

fn expand_decl(decl: &mut ProtocolDecl, spec: &Specification) -> Result<(), ExpandError> {
    decl.name = expand_name(&decl.name, spec)?;
    expand_expr(&mut decl.public, spec)?;
    for p in &mut decl.privates {
        p.name = expand_name(&p.name, spec)?;
    }
    if let Some(s) = &mut decl.sender {
        s.name = expand_name(&s.name, spec)?;
    }
    for r in &mut decl.recipients {
        r.name = expand_name(&r.name, spec)?;
    }
    for reference in &mut decl.body {
        match reference {
            Reference::Call { target, arguments, .. } => {
                *target = expand_name(target, spec)?;
                expand_expr(arguments, spec)?;
            }
            Reference::Message(m) => expand_decl(m, spec)?,
        }
    }
    check_aliases(decl)
}

fn expand_expr(expr: &mut ParamExpr, spec: &Specification) -> Result<(), ExpandError> {
    for clause in &mut expr.clauses {
        match clause {
            Clause::Param(p) => {
                p.name = expand_name(&p.name, spec)?;
                for c in &mut p.constraints {
                    if let Constraint::Type(TypeName::Name(n)) = c {
                        *n = expand_name(n, spec)?;
                    }
                    if let Constraint::Relation {
                        target: ConstraintTarget::Name(n),
                        ..
                    } = c
                    {
                        *n = expand_name(n, spec)?;
                    }
                }
            }
            Clause::Or(exprs) => {
                for e in exprs {
                    expand_expr(e, spec)?;
                }
            }
        }
    }
    Ok(())
}

fn expand_name(name: &QualifiedName, spec: &Specification) -> Result<QualifiedName, ExpandError> {
    match &name.prefix {
        None => Ok(name.clone()),
        Some(prefix) => {
            if let Some(base) = spec.preamble_value(prefix) {
                Ok(QualifiedName::plain(format!("{base}{}", name.local)))
            } else if RECOGNIZED_SCHEMES.contains(&prefix.as_str()) {
                Ok(QualifiedName::plain(name.text()))
            } else {
                Err(ExpandError::UnknownPrefix(prefix.clone()))
            }
        }
    }
}

/// Abbreviations act as aliases for their parameters; within one declaration
/// an abbreviation must identify a single parameter.
fn check_aliases(decl: &ProtocolDecl) -> Result<(), ExpandError> {
    let mut seen: Vec<(&str, &str)> = Vec::new();
    let publics = decl.public.params();
    let all = publics.iter().copied().chain(decl.privates.iter());
    for p in all {
        if let Some(ab) = &p.abbreviation {
            if let Some((_, other)) = seen.iter().find(|(a, n)| *a == ab.text && *n != p.name.local)
            {
                return Err(ExpandError::AmbiguousAlias(
                    ab.text.clone(),
                    (*other).to_string(),
                    p.name.local.clone(),
                ));
            }
            seen.push((&ab.text, &p.name.local));
        }
    }
    Ok(())
}
