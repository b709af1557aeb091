//! Metaprotocol generation: derive a role-binding protocol from a target
//! protocol's contact graph.
//!
//! The generator computes who contacts whom, ranks roles by distance from a
//! chosen initiator, and emits one single-recipient invite per non-initiator
//! role, ordered by rank then name. The first invite also binds the
//! metaprotocol id and the target protocol's keys. Each invite carries the
//! already-bound roles of the invitee's contact-graph neighborhood, which is
//! exactly what the invitee needs to address its own messages.

use crate::diagnostics::{codes, Diagnostic};
use crate::lang::{
    Adornment, Clause, Constraint, ConstraintTarget, ParamExpr, Parameter, ProtocolDecl,
    QualifiedName, Qualifiers, Reference, RelOp, RoleRef, Span, TypeName,
};
use crate::model::ResolvedProtocol;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetagenError {
    #[error("role `{0}` is unreachable from the initiator")]
    UnreachableRole(String),
    #[error("unknown role `{0}`")]
    UnknownRole(String),
    #[error("customization creates an invitation cycle involving `{0}`")]
    CyclicInvitation(String),
    #[error("protocol has no message schemas")]
    NoSchemas,
}

/// Directed contact graph: an edge per (sender, recipient) pair over all
/// flattened schemas, multicast expanded.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ContactGraph {
    pub nodes: Vec<String>,
    pub edges: BTreeSet<(String, String)>,
}

impl ContactGraph {
    pub fn successors(&self, role: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|(s, _)| s == role)
            .map(|(_, r)| r.as_str())
            .collect()
    }

    pub fn neighbors(&self, role: &str) -> BTreeSet<&str> {
        self.edges
            .iter()
            .filter_map(|(s, r)| {
                if s == role {
                    Some(r.as_str())
                } else if r == role {
                    Some(s.as_str())
                } else {
                    None
                }
            })
            .collect()
    }
}

pub fn contact_graph(resolved: &ResolvedProtocol) -> ContactGraph {
    let mut nodes = BTreeSet::new();
    let mut edges = BTreeSet::new();
    for schema in &resolved.schemas {
        let sender = resolved.params[schema.sender].id.clone();
        nodes.insert(sender.clone());
        for r in &schema.recipients {
            let recipient = resolved.params[r.param].id.clone();
            nodes.insert(recipient.clone());
            edges.insert((sender.clone(), recipient));
        }
    }
    ContactGraph {
        nodes: nodes.into_iter().collect(),
        edges,
    }
}

/// BFS distance of every role from the initiator along directed edges.
pub fn ranks(graph: &ContactGraph, initiator: &str) -> Result<BTreeMap<String, u32>, MetagenError> {
    if !graph.nodes.iter().any(|n| n == initiator) {
        return Err(MetagenError::UnknownRole(initiator.to_string()));
    }
    let ranks = bfs(graph, initiator, false);
    for node in &graph.nodes {
        if !ranks.contains_key(node) {
            return Err(MetagenError::UnreachableRole(node.clone()));
        }
    }
    Ok(ranks)
}

fn bfs(graph: &ContactGraph, initiator: &str, undirected: bool) -> BTreeMap<String, u32> {
    let mut out = BTreeMap::new();
    let mut queue = VecDeque::new();
    out.insert(initiator.to_string(), 0);
    queue.push_back(initiator.to_string());
    while let Some(node) = queue.pop_front() {
        let d = out[&node];
        let next: Vec<String> = if undirected {
            graph.neighbors(&node).into_iter().map(String::from).collect()
        } else {
            graph.successors(&node).into_iter().map(String::from).collect()
        };
        for n in next {
            if !out.contains_key(&n) {
                out.insert(n.clone(), d + 1);
                queue.push_back(n);
            }
        }
    }
    out
}

/// One planned invitation.
#[derive(Clone, Debug, Serialize)]
pub struct Invite {
    pub invitee: String,
    pub inviter: String,
    /// Already-bound roles of the invitee's neighborhood, carried in-payload.
    pub carries: Vec<String>,
}

/// The generated metaprotocol with its construction plan.
#[derive(Clone, Debug, Serialize)]
pub struct Generated {
    pub target: String,
    pub initiator: String,
    pub invites: Vec<Invite>,
    pub placeholders: BTreeMap<String, String>,
    pub decl: ProtocolDecl,
    pub diagnostics: Vec<Diagnostic>,
}

/// Generate the metaprotocol for `resolved` with the given initiating role.
pub fn generate(resolved: &ResolvedProtocol, initiator: &str) -> Result<Generated, MetagenError> {
    let graph = contact_graph(resolved);
    if graph.nodes.is_empty() {
        return Err(MetagenError::NoSchemas);
    }
    let initiator = resolved
        .param_index(initiator)
        .map(|i| resolved.params[i].id.clone())
        .filter(|id| graph.nodes.iter().any(|n| n == id))
        .ok_or_else(|| MetagenError::UnknownRole(initiator.to_string()))?;

    let mut diagnostics = Vec::new();
    let rank_map = match ranks(&graph, &initiator) {
        Ok(r) => r,
        Err(MetagenError::UnreachableRole(role)) => {
            // Invitation needs contact, not message-flow direction: fall back
            // to undirected distance.
            let undirected = bfs(&graph, &initiator, true);
            if let Some(missing) = graph.nodes.iter().find(|n| !undirected.contains_key(*n)) {
                return Err(MetagenError::UnreachableRole(missing.clone()));
            }
            diagnostics.push(Diagnostic::warning(
                &resolved.name,
                0,
                0,
                codes::UNREACHABLE_ROLE,
                format!("role `{role}` has no directed path from `{initiator}`; using undirected distance"),
            ));
            undirected
        }
        Err(other) => return Err(other),
    };

    let candidates: Vec<&str> = resolved
        .initiator_candidates
        .iter()
        .map(|&i| resolved.params[i].id.as_str())
        .collect();
    if !candidates.is_empty() && !candidates.contains(&initiator.as_str()) {
        diagnostics.push(Diagnostic::warning(
            &resolved.name,
            0,
            0,
            codes::INITIATOR_NOT_CANDIDATE,
            format!(
                "`{initiator}` does not send an initiating schema (candidates: {}); it must be explicitly selected",
                candidates.join(", ")
            ),
        ));
    }

    // Invite order: rank, then name. Inviter: the lowest-rank contactor.
    let mut invitees: Vec<String> = graph
        .nodes
        .iter()
        .filter(|n| **n != initiator)
        .cloned()
        .collect();
    invitees.sort_by_key(|n| (rank_map.get(n).copied().unwrap_or(u32::MAX), n.clone()));

    let mut invites = Vec::new();
    for invitee in &invitees {
        let mut contactors: Vec<(&String, u32)> = graph
            .edges
            .iter()
            .filter(|(_, r)| r == invitee)
            .map(|(s, _)| (s, rank_map.get(s).copied().unwrap_or(u32::MAX)))
            .collect();
        if contactors.is_empty() {
            // Undirected fallback: anyone adjacent can invite.
            contactors = graph
                .neighbors(invitee)
                .into_iter()
                .map(|s| {
                    let rank = rank_map.get(s).copied().unwrap_or(u32::MAX);
                    (
                        graph.nodes.iter().find(|n| n.as_str() == s).expect("node"),
                        rank,
                    )
                })
                .collect();
        }
        let inviter = contactors
            .into_iter()
            .min_by_key(|(s, rank)| (*rank, (*s).clone()))
            .map(|(s, _)| s.clone())
            .unwrap_or_else(|| initiator.clone());
        invites.push(Invite {
            invitee: invitee.clone(),
            inviter,
            carries: Vec::new(),
        });
    }

    let mut plan = Generated {
        target: resolved.name.clone(),
        initiator,
        invites,
        placeholders: BTreeMap::new(),
        decl: empty_decl(),
        diagnostics,
    };
    finish(&mut plan, resolved, &graph)?;
    Ok(plan)
}

/// Rewire invites per (invitee, inviter) overrides and revalidate ordering.
pub fn customize(
    generated: &Generated,
    resolved: &ResolvedProtocol,
    overrides: &[(String, String)],
) -> Result<Generated, MetagenError> {
    let mut plan = generated.clone();
    let graph = contact_graph(resolved);
    for (invitee, inviter) in overrides {
        let invitee_id = resolved
            .param_index(invitee)
            .map(|i| resolved.params[i].id.clone())
            .ok_or_else(|| MetagenError::UnknownRole(invitee.clone()))?;
        let inviter_id = resolved
            .param_index(inviter)
            .map(|i| resolved.params[i].id.clone())
            .ok_or_else(|| MetagenError::UnknownRole(inviter.clone()))?;
        let invite = plan
            .invites
            .iter_mut()
            .find(|i| i.invitee == invitee_id)
            .ok_or_else(|| MetagenError::UnknownRole(invitee.clone()))?;
        invite.inviter = inviter_id;
    }
    // Reorder so every inviter is bound before its invitee; a cycle means the
    // overrides are unsatisfiable.
    let mut ordered: Vec<Invite> = Vec::new();
    let mut bound: BTreeSet<String> = BTreeSet::new();
    bound.insert(plan.initiator.clone());
    let mut pending = plan.invites.clone();
    while !pending.is_empty() {
        let pos = pending.iter().position(|i| bound.contains(&i.inviter));
        match pos {
            Some(pos) => {
                let invite = pending.remove(pos);
                bound.insert(invite.invitee.clone());
                ordered.push(invite);
            }
            None => {
                return Err(MetagenError::CyclicInvitation(pending[0].invitee.clone()));
            }
        }
    }
    plan.invites = ordered;
    plan.diagnostics = generated.diagnostics.clone();
    finish(&mut plan, resolved, &graph)?;
    Ok(plan)
}

/// Fill placeholders, neighborhood payloads, and the rendered declaration.
fn finish(
    plan: &mut Generated,
    resolved: &ResolvedProtocol,
    graph: &ContactGraph,
) -> Result<(), MetagenError> {
    plan.placeholders.clear();
    plan.placeholders.insert(plan.initiator.clone(), "r0".to_string());
    for (i, invite) in plan.invites.iter().enumerate() {
        plan.placeholders
            .insert(invite.invitee.clone(), format!("r{}", i + 1));
    }
    // The first invite itself binds the initiator's role, so nothing is
    // bound before it.
    let mut bound: Vec<String> = Vec::new();
    for (i, invite) in plan.invites.iter_mut().enumerate() {
        let neighborhood = graph.neighbors(&invite.invitee);
        invite.carries = bound
            .iter()
            .filter(|b| neighborhood.contains(b.as_str()))
            .cloned()
            .collect();
        if i == 0 {
            bound.push(plan.initiator.clone());
        }
        bound.push(invite.invitee.clone());
    }
    plan.decl = render(plan, resolved);
    Ok(())
}

fn empty_decl() -> ProtocolDecl {
    ProtocolDecl {
        name: QualifiedName::plain("Generated"),
        public: ParamExpr::default(),
        privates: Vec::new(),
        body: Vec::new(),
        is_message: false,
        sender: None,
        recipients: Vec::new(),
        span: Span::default(),
    }
}

fn param(name: &str, adornment: Adornment, quals: Qualifiers, constraints: Vec<Constraint>) -> Parameter {
    Parameter {
        name: QualifiedName::plain(name),
        abbreviation: None,
        adornment,
        defaulted: false,
        qualifiers: quals,
        constraints,
        span: Span::default(),
    }
}

fn role_param(name: &str) -> Parameter {
    param(
        name,
        Adornment::Out,
        Qualifiers::default(),
        vec![Constraint::Type(TypeName::Role)],
    )
}

/// Render the declaration: placeholder roles, target roles, the metaprotocol
/// key, the target's keys, and one invite message per non-initiator role.
fn render(plan: &Generated, resolved: &ResolvedProtocol) -> ProtocolDecl {
    let mut public = Vec::new();
    let mut placeholders: Vec<&String> = plan.placeholders.values().collect();
    placeholders.sort_by_key(|p| p[1..].parse::<u32>().unwrap_or(u32::MAX));
    for ph in &placeholders {
        public.push(Clause::Param(role_param(ph)));
    }
    let mut roles: Vec<String> = vec![plan.initiator.clone()];
    roles.extend(plan.invites.iter().map(|i| i.invitee.clone()));
    for role in &roles {
        public.push(Clause::Param(role_param(role)));
    }
    public.push(Clause::Param(param(
        "mID",
        Adornment::Out,
        Qualifiers { key: true, local: false, set: false },
        Vec::new(),
    )));
    let target_keys: Vec<String> = resolved.key_model.global_keys.clone();
    for key in &target_keys {
        public.push(Clause::Param(param(key, Adornment::Out, Qualifiers::default(), Vec::new())));
    }

    let mut body = Vec::new();
    let mut bound_placeholders: BTreeSet<String> = BTreeSet::new();
    for (i, invite) in plan.invites.iter().enumerate() {
        let inviter_ph = plan.placeholders[&invite.inviter].clone();
        let invitee_ph = plan.placeholders[&invite.invitee].clone();
        let sender_first_use = bound_placeholders.insert(inviter_ph.clone());
        let sender = RoleRef {
            adornment: if sender_first_use { Adornment::Out } else { Adornment::In },
            defaulted: !sender_first_use,
            name: QualifiedName::plain(&inviter_ph),
            span: Span::default(),
        };
        let recipient = RoleRef {
            adornment: Adornment::Out,
            defaulted: false,
            name: QualifiedName::plain(&invitee_ph),
            span: Span::default(),
        };
        bound_placeholders.insert(invitee_ph.clone());

        let mut payload = Vec::new();
        let first = i == 0;
        let id_ad = if first { Adornment::Out } else { Adornment::Unspecified };
        payload.push(Clause::Param(param("mID", id_ad, Qualifiers::default(), Vec::new())));
        for key in &target_keys {
            payload.push(Clause::Param(param(key, id_ad, Qualifiers::default(), Vec::new())));
        }
        for carried in &invite.carries {
            payload.push(Clause::Param(param(
                carried,
                Adornment::Unspecified,
                Qualifiers::default(),
                Vec::new(),
            )));
        }
        if first {
            // Step 4 merged into the first invite: bind the ids and the
            // initiator's own role.
            payload.push(Clause::Param(param(
                &plan.initiator,
                Adornment::Out,
                Qualifiers::default(),
                vec![
                    Constraint::Type(TypeName::Role),
                    Constraint::Relation {
                        op: RelOp::Eq,
                        target: ConstraintTarget::Name(QualifiedName::plain("r0")),
                    },
                ],
            )));
        }
        payload.push(Clause::Param(param(
            &invite.invitee,
            Adornment::Out,
            Qualifiers::default(),
            vec![
                Constraint::Type(TypeName::Role),
                Constraint::Relation {
                    op: RelOp::Eq,
                    target: ConstraintTarget::Name(QualifiedName::plain(&invitee_ph)),
                },
            ],
        )));

        body.push(Reference::Message(Box::new(ProtocolDecl {
            name: QualifiedName::plain(format!("Invite{}", invite.invitee)),
            public: ParamExpr { clauses: payload },
            privates: Vec::new(),
            body: Vec::new(),
            is_message: true,
            sender: Some(sender),
            recipients: vec![recipient],
            span: Span::default(),
        })));
    }

    ProtocolDecl {
        name: QualifiedName::plain("Generated"),
        public: ParamExpr { clauses: public },
        privates: Vec::new(),
        body,
        is_message: false,
        sender: None,
        recipients: Vec::new(),
        span: Span::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{resolve, Loaded};

    fn load(files: &[&str]) -> Loaded {
        let docs: Vec<_> = files
            .iter()
            .map(|f| {
                let path = format!("{}/../../corpus/{f}", env!("CARGO_MANIFEST_DIR"));
                let text = std::fs::read_to_string(&path).unwrap();
                (f.to_string(), crate::lang::parse(&text).unwrap())
            })
            .collect();
        resolve(&docs)
    }

    fn court_wedding() -> Loaded {
        load(&["listing2.bspl", "listing1.bspl"])
    }

    #[test]
    fn court_wedding_contact_graph() {
        let loaded = court_wedding();
        let cw = loaded.get("CourtWedding").unwrap();
        let g = contact_graph(cw);
        let expect: BTreeSet<(String, String)> = [
            ("R", "Judge"),
            ("R", "E"),
            ("Judge", "R"),
            ("Judge", "E"),
            ("Judge", "Witness"),
            ("E", "Judge"),
            ("E", "R"),
            ("Witness", "Judge"),
        ]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        assert_eq!(g.edges, expect);
        // The narrative subset: J sends to R, E, and W; W sends to J.
        for (a, b) in [("Judge", "R"), ("Judge", "E"), ("Judge", "Witness"), ("Witness", "Judge")] {
            assert!(g.edges.contains(&(a.to_string(), b.to_string())));
        }
    }

    #[test]
    fn single_message_graph() {
        let loaded = load(&["transfer.bspl"]);
        let t = loaded.get("Transfer").unwrap();
        let g = contact_graph(t);
        assert_eq!(g.edges.len(), 1);
        assert!(g.edges.contains(&("D".to_string(), "B".to_string())));
    }

    #[test]
    fn court_wedding_ranks_from_r() {
        let loaded = court_wedding();
        let cw = loaded.get("CourtWedding").unwrap();
        let g = contact_graph(cw);
        let r = ranks(&g, "R").unwrap();
        assert_eq!(r["R"], 0);
        assert_eq!(r["Judge"], 1);
        assert_eq!(r["E"], 1);
        assert_eq!(r["Witness"], 2);
    }

    #[test]
    fn single_node_rank() {
        let g = ContactGraph {
            nodes: vec!["A".into()],
            edges: BTreeSet::new(),
        };
        let r = ranks(&g, "A").unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r["A"], 0);
    }

    #[test]
    fn unreachable_role_is_an_error() {
        let mut edges = BTreeSet::new();
        edges.insert(("A".to_string(), "B".to_string()));
        edges.insert(("C".to_string(), "A".to_string()));
        let g = ContactGraph {
            nodes: vec!["A".into(), "B".into(), "C".into()],
            edges,
        };
        assert_eq!(ranks(&g, "A"), Err(MetagenError::UnreachableRole("C".into())));
    }

    // Independent shortest-path oracle (unit-weight Dijkstra).
    fn dijkstra(edges: &BTreeSet<(String, String)>, start: &str) -> BTreeMap<String, u32> {
        let mut dist: BTreeMap<String, u32> = BTreeMap::new();
        dist.insert(start.to_string(), 0);
        let mut frontier = vec![(0u32, start.to_string())];
        while let Some(pos) = frontier
            .iter()
            .enumerate()
            .min_by_key(|(_, (d, n))| (*d, n.clone()))
            .map(|(i, _)| i)
        {
            let (d, node) = frontier.remove(pos);
            for (s, r) in edges {
                if s == &node {
                    let nd = d + 1;
                    if dist.get(r).map(|&x| nd < x).unwrap_or(true) {
                        dist.insert(r.clone(), nd);
                        frontier.push((nd, r.clone()));
                    }
                }
            }
        }
        dist
    }

    #[test]
    fn ranks_match_dijkstra_on_random_graphs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let n = rng.random_range(2..7usize);
            let names: Vec<String> = (0..n).map(|i| format!("N{i}")).collect();
            let mut edges = BTreeSet::new();
            // Spanning path keeps everything reachable.
            for i in 1..n {
                edges.insert((names[rng.random_range(0..i)].clone(), names[i].clone()));
            }
            for _ in 0..rng.random_range(0..6) {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                if a != b {
                    edges.insert((names[a].clone(), names[b].clone()));
                }
            }
            let g = ContactGraph {
                nodes: names.clone(),
                edges: edges.clone(),
            };
            let got = ranks(&g, "N0").unwrap();
            let want = dijkstra(&edges, "N0");
            assert_eq!(got, want);
        }
    }

    #[test]
    fn generated_metaprotocol_matches_published_skeleton() {
        let loaded = court_wedding();
        let cw = loaded.get("CourtWedding").unwrap();
        let generated = generate(cw, "R").unwrap();
        // Three invites, E first among the rank-1 roles, W from the judge.
        let plan: Vec<(String, String)> = generated
            .invites
            .iter()
            .map(|i| (i.inviter.clone(), i.invitee.clone()))
            .collect();
        assert_eq!(
            plan,
            vec![
                ("R".to_string(), "E".to_string()),
                ("R".to_string(), "Judge".to_string()),
                ("Judge".to_string(), "Witness".to_string()),
            ]
        );
        assert_eq!(generated.placeholders["R"], "r0");
        assert_eq!(generated.placeholders["E"], "r1");
        assert_eq!(generated.placeholders["Judge"], "r2");
        assert_eq!(generated.placeholders["Witness"], "r3");
        // Invite payloads carry the invitee's bound neighborhood.
        assert!(generated.invites[0].carries.is_empty());
        assert_eq!(generated.invites[1].carries, vec!["R", "E"]);
        assert_eq!(generated.invites[2].carries, vec!["Judge"]);
        // The initiator is not a candidate (J starts the ceremony): warn.
        assert!(generated
            .diagnostics
            .iter()
            .any(|d| d.code == crate::diagnostics::codes::INITIATOR_NOT_CANDIDATE));
        // Minimality: one invite per non-initiator role.
        assert_eq!(generated.invites.len(), 3);
    }

    #[test]
    fn generated_declaration_parses_and_checks_clean() {
        let loaded = court_wedding();
        let cw = loaded.get("CourtWedding").unwrap();
        let generated = generate(cw, "R").unwrap();
        let text = crate::lang::print(&crate::lang::Specification {
            preamble: Vec::new(),
            declarations: vec![generated.decl.clone()],
        });
        let reloaded = crate::model::resolve_text("<generated>", &text).unwrap();
        assert!(
            !reloaded.diagnostics.iter().any(|d| d.is_error()),
            "{text}\n{:?}",
            reloaded.diagnostics
        );
        let g = reloaded.get("Generated").unwrap();
        assert_eq!(g.schemas.len(), 3);
    }

    #[test]
    fn two_role_protocol_generates_single_invite() {
        let loaded = load(&["transfer.bspl"]);
        let t = loaded.get("Transfer").unwrap();
        let generated = generate(t, "D").unwrap();
        assert_eq!(generated.invites.len(), 1);
        assert_eq!(generated.invites[0].inviter, "D");
        assert_eq!(generated.invites[0].invitee, "B");
    }

    #[test]
    fn customize_rewires_the_witness_invite() {
        let loaded = court_wedding();
        let cw = loaded.get("CourtWedding").unwrap();
        let generated = generate(cw, "R").unwrap();
        let customized =
            customize(&generated, cw, &[("W".to_string(), "R".to_string())]).unwrap();
        let w_invite = customized
            .invites
            .iter()
            .find(|i| i.invitee == "Witness")
            .unwrap();
        assert_eq!(w_invite.inviter, "R");
        // The witness still needs the judge's address.
        assert_eq!(w_invite.carries, vec!["Judge"]);
    }

    #[test]
    fn customize_with_no_overrides_is_identity() {
        let loaded = court_wedding();
        let cw = loaded.get("CourtWedding").unwrap();
        let generated = generate(cw, "R").unwrap();
        let same = customize(&generated, cw, &[]).unwrap();
        let a: Vec<_> = generated.invites.iter().map(|i| (&i.inviter, &i.invitee)).collect();
        let b: Vec<_> = same.invites.iter().map(|i| (&i.inviter, &i.invitee)).collect();
        assert_eq!(a, b);
        assert_eq!(generated.decl, same.decl);
    }

    #[test]
    fn cyclic_customization_is_rejected() {
        // B invites C and C invites B: neither can go first.
        let text = "P(in A, B, C: role, in key k, out x, out y) {
  A -> B: M1[in k, out x]
  B -> C: M2[in k, in x, out y]
  C -> B: M3[in k, in x, in y, out z]
}";
        let loaded = resolve(&[("<memory>".into(), crate::lang::parse(text).unwrap())]);
        let p = loaded.get("P").unwrap();
        let generated = generate(p, "A").unwrap();
        match customize(
            &generated,
            p,
            &[("B".to_string(), "C".to_string()), ("C".to_string(), "B".to_string())],
        ) {
            Err(MetagenError::CyclicInvitation(_)) => {}
            other => panic!("expected CyclicInvitation, got {other:?}"),
        }
    }

    #[test]
    fn inviter_knowledge_invariant_holds() {
        let loaded = court_wedding();
        let cw = loaded.get("CourtWedding").unwrap();
        let generated = generate(cw, "R").unwrap();
        let mut bound = vec![generated.initiator.clone()];
        for invite in &generated.invites {
            for carried in &invite.carries {
                assert!(bound.contains(carried), "{carried} carried before binding");
            }
            assert!(bound.contains(&invite.inviter), "inviter bound late");
            bound.push(invite.invitee.clone());
        }
    }
}
