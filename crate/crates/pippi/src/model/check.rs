//! Structural diagnostics over resolved protocols.

use super::{Loaded, ResolvedProtocol, Visibility};
use crate::diagnostics::{codes, Diagnostic};
use crate::lang::Adornment;
use std::collections::BTreeSet;

pub(super) fn check_static_with(p: &ResolvedProtocol, _loaded: &Loaded) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let file = &p.name;

    // Production map: which parameters some schema can bind.
    let mut produced: BTreeSet<usize> = BTreeSet::new();
    let mut producer_schemas: Vec<Vec<(&str, BTreeSet<usize>)>> = vec![Vec::new(); p.params.len()];
    for s in &p.schemas {
        let key_set: BTreeSet<usize> = s
            .payload
            .iter()
            .enumerate()
            .filter(|(_, slot)| slot.key)
            .map(|(i, _)| s.slot_params[i])
            .collect();
        for (pos, slot) in s.payload.iter().enumerate() {
            if matches!(slot.adornment, Adornment::Out | Adornment::Any) {
                let idx = s.slot_params[pos];
                produced.insert(idx);
                if slot.adornment == Adornment::Out && !slot.set && !slot.key {
                    producer_schemas[idx].push((&s.id, key_set.clone()));
                }
            }
        }
        if s.sender_adornment == Adornment::Out || s.sender_defaulted {
            produced.insert(s.sender);
        }
        for r in &s.recipients {
            if r.adornment == Adornment::Out || r.defaulted {
                produced.insert(r.param);
            }
        }
    }
    let external = |idx: usize| -> bool {
        let info = &p.params[idx];
        info.visibility == Visibility::Public
            && matches!(info.adornment, Adornment::In | Adornment::Any)
    };

    // Dead dependency: an explicit `in` usage that nothing can ever satisfy.
    let mut dead: BTreeSet<usize> = BTreeSet::new();
    for s in &p.schemas {
        for (pos, slot) in s.payload.iter().enumerate() {
            let idx = s.slot_params[pos];
            if slot.adornment == Adornment::In && !produced.contains(&idx) && !external(idx) {
                dead.insert(idx);
            }
        }
        for r in &s.recipients {
            if r.adornment == Adornment::In
                && !r.defaulted
                && !produced.contains(&r.param)
                && !external(r.param)
            {
                dead.insert(r.param);
            }
        }
        if s.sender_adornment == Adornment::In
            && !s.sender_defaulted
            && !produced.contains(&s.sender)
            && !external(s.sender)
        {
            dead.insert(s.sender);
        }
    }
    for idx in dead {
        out.push(Diagnostic::error(
            file,
            0,
            0,
            codes::DEAD_DEPENDENCY,
            format!(
                "parameter `{}` is consumed but never bound by any message or external source",
                p.params[idx].id
            ),
        ));
    }

    // Double-bind risk: several schemas bind the same non-set parameter
    // within the same key context.
    for (idx, schemas) in producer_schemas.iter().enumerate() {
        let mut flagged = false;
        for (i, (id_a, keys_a)) in schemas.iter().enumerate() {
            for (id_b, keys_b) in schemas.iter().skip(i + 1) {
                if keys_a == keys_b && !flagged {
                    flagged = true;
                    out.push(Diagnostic::warning(
                        file,
                        0,
                        0,
                        codes::DOUBLE_BIND_RISK,
                        format!(
                            "parameter `{}` is bound by both {id_a} and {id_b} in the same key context",
                            p.params[idx].id,
                        ),
                    ));
                }
            }
        }
    }

    // Unsatisfiable completion: a public out parameter nothing produces.
    for (idx, info) in p.params.iter().enumerate() {
        if info.visibility == Visibility::Public
            && info.adornment == Adornment::Out
            && !produced.contains(&idx)
        {
            out.push(Diagnostic::warning(
                file,
                0,
                0,
                codes::UNBINDABLE_PUBLIC,
                format!("public parameter `{}` can never be bound", info.id),
            ));
        }
    }

    // Local keys need an enclosing global key in the same schema.
    for s in &p.schemas {
        let has_global = s.payload.iter().any(|slot| slot.key && !slot.local);
        let locals: Vec<&str> = s
            .payload
            .iter()
            .filter(|slot| slot.key && slot.local)
            .map(|slot| slot.name.as_str())
            .collect();
        if !locals.is_empty() && !has_global {
            out.push(Diagnostic::error(
                file,
                0,
                0,
                codes::LOCAL_KEY_SCOPE,
                format!(
                    "local key{} {} used without a global key in schema {}",
                    if locals.len() > 1 { "s" } else { "" },
                    locals.join(", "),
                    s.id
                ),
            ));
        }
    }

    // A declaration should be keyed.
    if p.key_model.global_keys.is_empty() && p.key_model.local_keys.is_empty() {
        out.push(Diagnostic::warning(
            file,
            0,
            0,
            codes::NO_KEY,
            format!("`{}` declares no key parameter", p.name),
        ));
    }

    out
}
