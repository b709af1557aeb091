use super::*;
use crate::codec::Value;
use crate::model::{resolve, Loaded};
use std::collections::BTreeMap;
use std::sync::Arc;

fn load(files: &[&str]) -> Arc<Loaded> {
    let docs: Vec<_> = files
        .iter()
        .map(|f| {
            let path = format!("{}/../../corpus/{f}", env!("CARGO_MANIFEST_DIR"));
            let text = std::fs::read_to_string(&path).unwrap();
            (f.to_string(), crate::lang::parse(&text).unwrap())
        })
        .collect();
    let loaded = resolve(&docs);
    assert!(
        !loaded.has_errors(),
        "corpus load failed: {:?}",
        loaded.diagnostics
    );
    Arc::new(loaded)
}

fn adapter(specs: &Arc<Loaded>, address: &str, plays: &[(&str, &str)], seed: u64) -> Adapter {
    Adapter::new(
        AdapterConfig {
            address: address.to_string(),
            plays: plays.iter().map(|(p, r)| (p.to_string(), r.to_string())).collect(),
            handlers: BTreeMap::new(),
            seed,
        },
        Arc::clone(specs),
        None,
    )
}

fn id(v: &str) -> Value {
    Value::Id(v.to_string())
}

fn str_v(v: &str) -> Value {
    Value::Str(v.to_string())
}

fn ctx(pairs: &[(&str, Value)]) -> KeyTuple {
    KeyTuple::new(pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect())
}

fn values(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn recipients(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn witness_judge(specs: &Arc<Loaded>) -> Adapter {
    let mut j = adapter(specs, "carol", &[("Witness", "J")], 1);
    let c = ctx(&[("cID", id("c1"))]);
    j.seed_binding("Witness", "cID", &c, id("c1"));
    j.seed_binding("Witness", "J", &c, id("carol"));
    j.seed_binding("Witness", "W", &c, id("dave"));
    j
}

#[test]
fn enabled_request_approval_when_cid_bound() {
    let specs = load(&["listing1.bspl"]);
    let j = witness_judge(&specs);
    let c = ctx(&[("cID", id("c1"))]);
    let enabled = j.enabled("Witness", &c);
    let ids: Vec<_> = enabled.iter().map(|e| e.schema_id.as_str()).collect();
    assert_eq!(ids, vec!["Witness/RequestApproval"]);
    assert_eq!(enabled[0].required_ins["cID"], id("c1"));
    assert_eq!(enabled[0].open_outs, vec!["req"]);
}

#[test]
fn empty_store_blocks_in_parameters() {
    let specs = load(&["listing1.bspl"]);
    let j = adapter(&specs, "carol", &[("Witness", "J")], 1);
    assert!(j.enabled_all().is_empty());
    assert!(j.enabled("Witness", &KeyTuple::empty()).is_empty());
}

#[test]
fn emission_binds_outs_and_returns_wire() {
    let specs = load(&["listing1.bspl"]);
    let mut j = witness_judge(&specs);
    let c = ctx(&[("cID", id("c1"))]);
    let wires = j
        .emit(
            "Witness",
            "Witness/RequestApproval",
            &c,
            &values(&[("req", str_v("please-sign"))]),
            &BTreeMap::new(),
        )
        .unwrap();
    assert_eq!(wires.len(), 1);
    assert_eq!(wires[0].recipient_address, "dave");
    assert_eq!(wires[0].key_values, vec![id("c1")]);
    assert_eq!(j.store.lookup("Witness", "req", &c), Some(&str_v("please-sign")));
    assert_eq!(j.store.history.len(), 1);
    assert_eq!(j.store.history[0].direction, Direction::Sent);
}

#[test]
fn double_bind_is_rejected() {
    let specs = load(&["listing1.bspl"]);
    let mut j = witness_judge(&specs);
    let c = ctx(&[("cID", id("c1"))]);
    j.emit(
        "Witness",
        "Witness/RequestApproval",
        &c,
        &values(&[("req", str_v("one"))]),
        &BTreeMap::new(),
    )
    .unwrap();
    match j.emit(
        "Witness",
        "Witness/RequestApproval",
        &c,
        &values(&[("req", str_v("two"))]),
        &BTreeMap::new(),
    ) {
        Err(EmitError::DoubleBind { param }) => assert_eq!(param, "req"),
        other => panic!("expected DoubleBind, got {other:?}"),
    }
}

#[test]
fn not_enabled_names_the_violated_requirement() {
    let specs = load(&["listing1.bspl"]);
    let mut j = witness_judge(&specs);
    let c = ctx(&[("cID", id("c1"))]);
    // Carol is not the Approve sender (W is dave).
    match j.emit("Witness", "Witness/Approve", &c, &BTreeMap::new(), &BTreeMap::new()) {
        Err(EmitError::NotEnabled { reason, .. }) => {
            assert!(reason.contains("another agent"), "{reason}");
        }
        other => panic!("expected NotEnabled, got {other:?}"),
    }
}

#[test]
fn receive_binds_payload_and_envelope_roles() {
    let specs = load(&["listing1.bspl"]);
    let mut j = witness_judge(&specs);
    let c = ctx(&[("cID", id("c1"))]);
    let wires = j
        .emit(
            "Witness",
            "Witness/RequestApproval",
            &c,
            &values(&[("req", str_v("sign?"))]),
            &BTreeMap::new(),
        )
        .unwrap();

    let mut w = adapter(&specs, "dave", &[("Witness", "W")], 2);
    let outcome = w.receive(&wires[0]).unwrap();
    match outcome {
        Reception::Integrated { newly_bound, context, .. } => {
            assert_eq!(context, c);
            assert!(newly_bound.contains(&"cID".to_string()));
            assert!(newly_bound.contains(&"req".to_string()));
        }
        other => panic!("expected integration, got {other:?}"),
    }
    // The witness learns the judge's address from the envelope and fills the
    // role it was addressed as.
    assert_eq!(w.store.lookup("Witness", "J", &c), Some(&id("carol")));
    assert_eq!(w.store.lookup("Witness", "W", &c), Some(&id("dave")));
    let enabled = w.enabled("Witness", &c);
    let ids: Vec<_> = enabled.iter().map(|e| e.schema_id.as_str()).collect();
    assert_eq!(ids, vec!["Witness/Approve", "Witness/Object"]);
}

#[test]
fn reception_is_idempotent() {
    let specs = load(&["listing1.bspl"]);
    let mut j = witness_judge(&specs);
    let c = ctx(&[("cID", id("c1"))]);
    let wires = j
        .emit(
            "Witness",
            "Witness/RequestApproval",
            &c,
            &values(&[("req", str_v("sign?"))]),
            &BTreeMap::new(),
        )
        .unwrap();
    let mut w = adapter(&specs, "dave", &[("Witness", "W")], 2);
    w.receive(&wires[0]).unwrap();
    let snapshot = w.store.clone();
    match w.receive(&wires[0]).unwrap() {
        Reception::Duplicate => {}
        other => panic!("expected Duplicate, got {other:?}"),
    }
    assert!(w.store.same_state(&snapshot));
}

#[test]
fn conflicting_payload_is_quarantined_whole() {
    let specs = load(&["listing1.bspl"]);
    let mut j = witness_judge(&specs);
    let c = ctx(&[("cID", id("c1"))]);
    let wires = j
        .emit(
            "Witness",
            "Witness/RequestApproval",
            &c,
            &values(&[("req", str_v("sign?"))]),
            &BTreeMap::new(),
        )
        .unwrap();
    let mut w = adapter(&specs, "dave", &[("Witness", "W")], 2);
    w.receive(&wires[0]).unwrap();
    let mut tampered = wires[0].clone();
    tampered.payload[1] = str_v("forged");
    match w.receive(&tampered) {
        Err(ReceiveError::IntegrityViolation { param, .. }) => assert_eq!(param, "req"),
        other => panic!("expected IntegrityViolation, got {other:?}"),
    }
    assert_eq!(w.store.lookup("Witness", "req", &c), Some(&str_v("sign?")));
    assert_eq!(w.quarantined().len(), 1);
}

#[test]
fn unknown_schema_is_an_error() {
    let specs = load(&["listing1.bspl"]);
    let mut w = adapter(&specs, "dave", &[("Witness", "W")], 2);
    let wire = crate::codec::WireMessage {
        schema_id: "Nope/Msg".into(),
        sender_address: "x".into(),
        recipient_address: "dave".into(),
        key_values: vec![],
        payload: vec![],
    };
    assert!(matches!(w.receive(&wire), Err(ReceiveError::UnknownSchema(_))));
}

#[test]
fn out_of_order_reception_converges() {
    let specs = load(&["listing1.bspl"]);
    let mut j = witness_judge(&specs);
    let c = ctx(&[("cID", id("c1"))]);
    let ra = j
        .emit(
            "Witness",
            "Witness/RequestApproval",
            &c,
            &values(&[("req", str_v("sign?"))]),
            &BTreeMap::new(),
        )
        .unwrap();
    let mut w = adapter(&specs, "dave", &[("Witness", "W")], 2);
    w.receive(&ra[0]).unwrap();
    let approve = w
        .emit(
            "Witness",
            "Witness/Approve",
            &c,
            &values(&[("sig", str_v("dave-sig"))]),
            &BTreeMap::new(),
        )
        .unwrap();

    let run = |order: [&crate::codec::WireMessage; 2]| {
        let mut x = adapter(&specs, "observer", &[("Witness", "J")], 3);
        x.seed_binding("Witness", "J", &c, id("observer"));
        for wire in order {
            let _ = x.receive(wire);
        }
        x.store.clone()
    };
    let in_order = run([&ra[0], &approve[0]]);
    let out_of_order = run([&approve[0], &ra[0]]);
    assert!(in_order.same_state(&out_of_order));
}

#[test]
fn completion_follows_disjunction() {
    let specs = load(&["listing1.bspl"]);
    let mut j = witness_judge(&specs);
    let c = ctx(&[("cID", id("c1"))]);
    assert!(!j.is_complete("Witness", &c));
    j.seed_binding("Witness", "req", &c, str_v("r"));
    assert!(!j.is_complete("Witness", &c));
    j.seed_binding("Witness", "sig", &c, str_v("s"));
    assert!(j.is_complete("Witness", &c));
}

#[test]
fn only_keys_bound_is_incomplete() {
    let specs = load(&["listing1.bspl"]);
    let mut j = adapter(&specs, "carol", &[("Witness", "J")], 1);
    let c = ctx(&[("cID", id("c1"))]);
    j.seed_binding("Witness", "cID", &c, id("c1"));
    assert!(!j.is_complete("Witness", &c));
}

// ---------------------------------------------------------------------
// Independent adornment-rule oracle for the Witness protocol: the emission
// and completion rules applied directly to a set of bound parameters.
// ---------------------------------------------------------------------

struct OracleSchema {
    id: &'static str,
    sender: &'static str,
    recipients: &'static [&'static str],
    ins: &'static [&'static str],
    outs: &'static [&'static str],
}

const WITNESS_ORACLE: &[OracleSchema] = &[
    OracleSchema {
        id: "Witness/RequestApproval",
        sender: "J",
        recipients: &["W"],
        ins: &["cID"],
        outs: &["req"],
    },
    OracleSchema {
        id: "Witness/Approve",
        sender: "W",
        recipients: &["J"],
        ins: &["cID", "req"],
        outs: &["sig"],
    },
    OracleSchema {
        id: "Witness/Object",
        sender: "W",
        recipients: &["J"],
        ins: &["cID", "req"],
        outs: &["objection"],
    },
];

fn oracle_enabled(agent_role: &str, bound: &[&str]) -> Vec<&'static str> {
    WITNESS_ORACLE
        .iter()
        .filter(|s| s.sender == agent_role)
        .filter(|s| bound.contains(&s.sender))
        .filter(|s| s.recipients.iter().all(|r| bound.contains(r)))
        .filter(|s| s.ins.iter().all(|p| bound.contains(p)))
        .filter(|s| s.outs.iter().all(|p| !bound.contains(p)))
        .map(|s| s.id)
        .collect()
}

fn oracle_complete(bound: &[&str]) -> bool {
    bound.contains(&"J")
        && bound.contains(&"W")
        && bound.contains(&"cID")
        && (bound.contains(&"sig") || bound.contains(&"objection"))
}

#[test]
fn witness_binding_subsets_match_brute_force_oracle() {
    let specs = load(&["listing1.bspl"]);
    let vars = ["J", "W", "cID", "req", "sig", "objection"];
    let c = ctx(&[("cID", id("c1"))]);
    for mask in 0u32..(1 << vars.len()) {
        let bound: Vec<&str> = vars
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, v)| *v)
            .collect();
        for (agent, role) in [("carol", "J"), ("dave", "W")] {
            let mut a = adapter(&specs, agent, &[("Witness", role)], 7);
            for var in &bound {
                let value = match *var {
                    "J" => id("carol"),
                    "W" => id("dave"),
                    "cID" => id("c1"),
                    other => str_v(other),
                };
                a.seed_binding("Witness", var, &c, value);
            }
            let got: Vec<String> = a
                .enabled("Witness", &c)
                .into_iter()
                .map(|e| e.schema_id)
                .collect();
            let want: Vec<String> =
                oracle_enabled(role, &bound).into_iter().map(String::from).collect();
            assert_eq!(got, want, "agent {agent} bound={bound:?}");
            assert_eq!(
                a.is_complete("Witness", &c),
                oracle_complete(&bound),
                "completion for bound={bound:?}"
            );
        }
    }
}

// ---------------------------------------------------------------------
// Key correlation and queries
// ---------------------------------------------------------------------

#[test]
fn tracking_info_records_association_and_joins() {
    let specs = load(&["listing7.bspl", "order_deliver.bspl"]);
    let mut b = adapter(&specs, "buyer", &[("Invertible", "B")], 1);
    let mut s = adapter(&specs, "seller", &[("Invertible", "S")], 2);
    let po = b
        .emit(
            "Invertible",
            "Order/PlaceOrder",
            &KeyTuple::empty(),
            &values(&[("oID", id("o-1")), ("item", str_v("widget"))]),
            &recipients(&[("S", "seller")]),
        )
        .unwrap();
    s.receive(&po[0]).unwrap();
    let octx = ctx(&[("oID", id("o-1"))]);
    let quote = s
        .emit("Invertible", "Order/Quote", &octx, &values(&[("price", Value::Int(9))]), &BTreeMap::new())
        .unwrap();
    b.receive(&quote[0]).unwrap();
    let tracking = s
        .emit(
            "Invertible",
            "Invertible/TrackingInfo",
            &octx,
            &values(&[("dID", id("d-1"))]),
            &BTreeMap::new(),
        )
        .unwrap();
    b.receive(&tracking[0]).unwrap();
    // The association lets the seller satisfy Dispatch's `in item` (bound
    // under oID) in the dID context.
    let dctx = ctx(&[("dID", id("d-1"))]);
    let enabled: Vec<_> = s
        .enabled("Invertible", &dctx)
        .into_iter()
        .map(|e| e.schema_id)
        .collect();
    assert!(enabled.contains(&"Deliver/Dispatch".to_string()), "{enabled:?}");
    let dispatch = s
        .emit(
            "Invertible",
            "Deliver/Dispatch",
            &dctx,
            &values(&[("package", str_v("pkg"))]),
            &BTreeMap::new(),
        )
        .unwrap();
    b.receive(&dispatch[0]).unwrap();
    // Querying by oID joins across the association to the dID context.
    let hits = b.store.query("Invertible", "package", &[("oID".to_string(), id("o-1"))]);
    assert_eq!(hits.len(), 1);
    assert_eq!(hits[0].1, &str_v("pkg"));
    assert!(b.is_complete("Invertible", &octx));
    assert!(s.is_complete("Invertible", &octx));
}

#[test]
fn query_empty_store_is_empty() {
    let specs = load(&["listing8.bspl"]);
    let a = adapter(&specs, "x", &[("Support", "B")], 1);
    assert!(a.store.query("Support", "content", &[]).is_empty());
}

#[test]
fn support_replies_under_both_local_keys() {
    let specs = load(&["listing8.bspl"]);
    let mut b = adapter(&specs, "bee", &[("Support", "B")], 1);
    let mut s = adapter(&specs, "ess", &[("Support", "S")], 2);
    let open = b
        .emit(
            "Support",
            "Support/OpenTicket",
            &KeyTuple::empty(),
            &values(&[("ID", id("t1")), ("topic", str_v("printer"))]),
            &recipients(&[("S", "ess")]),
        )
        .unwrap();
    s.receive(&open[0]).unwrap();
    let tctx = ctx(&[("ID", id("t1"))]);
    let sreply = s
        .emit("Support", "Support/SReply", &tctx, &values(&[("content", str_v("try-this"))]), &BTreeMap::new())
        .unwrap();
    b.receive(&sreply[0]).unwrap();
    let breply = b
        .emit("Support", "Support/BReply", &tctx, &values(&[("content", str_v("nope"))]), &BTreeMap::new())
        .unwrap();
    s.receive(&breply[0]).unwrap();
    // Replies appear under both local keys for a single query by ticket id.
    let hits = b.store.query("Support", "content", &[("ID".to_string(), id("t1"))]);
    assert_eq!(hits.len(), 2, "{hits:?}");
    let tuples: Vec<String> = hits.iter().map(|(k, _)| k.to_string()).collect();
    assert!(tuples.iter().any(|t| t.contains("srID=1")), "{tuples:?}");
    assert!(tuples.iter().any(|t| t.contains("brID=1")), "{tuples:?}");
    // Local keys are monotone per-scope counters starting at 1.
    let sreply2 = s
        .emit("Support", "Support/SReply", &tctx, &values(&[("content", str_v("more"))]), &BTreeMap::new())
        .unwrap();
    assert_eq!(sreply2[0].key_values, vec![id("t1"), Value::Int(2)]);
}

// ---------------------------------------------------------------------
// Metaprotocol enactment: role binding via payload and constraints, late
// binding of the ceremony.
// ---------------------------------------------------------------------

#[test]
fn generated_invites_bind_roles_with_constraints() {
    let specs = load(&["listing4.bspl"]);
    let mut r0 = adapter(&specs, "alice", &[("Generated", "r0")], 1);
    let wires = r0
        .emit(
            "Generated",
            "Generated/InviteE",
            &KeyTuple::empty(),
            &values(&[
                ("mID", id("m-1")),
                ("cID", id("c-1")),
                ("R", id("alice")),
                ("E", id("bob")),
            ]),
            &recipients(&[("r1", "bob")]),
        )
        .unwrap();
    assert_eq!(wires[0].recipient_address, "bob");
    let mctx = ctx(&[("mID", id("m-1"))]);
    assert_eq!(r0.store.lookup("Generated", "r0", &mctx), Some(&id("alice")));
    assert_eq!(r0.store.lookup("Generated", "r1", &mctx), Some(&id("bob")));
    assert_eq!(r0.store.lookup("Generated", "R", &mctx), Some(&id("alice")));
    assert_eq!(r0.store.lookup("Generated", "E", &mctx), Some(&id("bob")));
}

#[test]
fn role_constraint_violation_blocks_emission() {
    let specs = load(&["listing4.bspl"]);
    let mut r0 = adapter(&specs, "alice", &[("Generated", "r0")], 1);
    // R must equal r0 (the sender, alice); eve violates the constraint.
    match r0.emit(
        "Generated",
        "Generated/InviteE",
        &KeyTuple::empty(),
        &values(&[
            ("mID", id("m-1")),
            ("cID", id("c-1")),
            ("R", id("eve")),
            ("E", id("bob")),
        ]),
        &recipients(&[("r1", "bob")]),
    ) {
        Err(EmitError::ConstraintViolation { param, .. }) => assert_eq!(param, "R"),
        other => panic!("expected ConstraintViolation, got {other:?}"),
    }
}

#[test]
fn late_bound_ceremony_projects_role_bindings() {
    let specs = load(&["errata/proposal.bspl", "listing2.bspl", "listing1.bspl"]);
    let mut alice = adapter(&specs, "alice", &[("Proposal", "r0"), ("CourtWedding", "R")], 1);
    let propose = alice
        .emit(
            "Proposal",
            "Proposal/Propose",
            &KeyTuple::empty(),
            &values(&[
                ("mID", id("m-1")),
                ("ceremony", id("CourtWedding")),
                ("R", id("alice")),
                ("E", id("bob")),
            ]),
            &recipients(&[("r1", "bob")]),
        )
        .unwrap();

    let mut bob = adapter(&specs, "bob", &[("Proposal", "r1"), ("CourtWedding", "E")], 2);
    bob.receive(&propose[0]).unwrap();
    let mctx = ctx(&[("mID", id("m-1"))]);
    let accept = bob
        .emit("Proposal", "Proposal/Accept", &mctx, &values(&[("acceptance", str_v("yes"))]), &BTreeMap::new())
        .unwrap();
    alice.receive(&accept[0]).unwrap();
    let plan = alice
        .emit("Proposal", "Proposal/Plan", &mctx, &values(&[("cID", id("c-1"))]), &BTreeMap::new())
        .unwrap();
    bob.receive(&plan[0]).unwrap();

    // The ceremony reference is bound for both parties: proposal-level role
    // bindings project into the ceremony's own key context.
    let cctx = ctx(&[("cID", id("c-1"))]);
    assert_eq!(alice.store.lookup("CourtWedding", "R", &cctx), Some(&id("alice")));
    assert_eq!(alice.store.lookup("CourtWedding", "E", &cctx), Some(&id("bob")));
    assert_eq!(bob.store.lookup("CourtWedding", "R", &cctx), Some(&id("alice")));
    assert_eq!(bob.store.lookup("CourtWedding", "E", &cctx), Some(&id("bob")));
}

#[test]
fn completion_events_fire_once() {
    let specs = load(&["listing1.bspl"]);
    let mut j = witness_judge(&specs);
    let c = ctx(&[("cID", id("c1"))]);
    j.seed_binding("Witness", "req", &c, str_v("r"));
    j.seed_binding("Witness", "sig", &c, str_v("s"));
    let events = j.completion_events();
    assert_eq!(events, vec![("Witness".to_string(), c.clone())]);
    assert!(j.completion_events().is_empty());
}

#[test]
fn role_bindings_are_immutable() {
    let specs = load(&["listing1.bspl"]);
    let mut j = witness_judge(&specs);
    let c = ctx(&[("cID", id("c1"))]);
    let outcome = j.store.write("Witness", "W", &c, id("mallory"), false);
    assert!(matches!(outcome, WriteOutcome::Conflict { .. }));
    assert_eq!(j.store.lookup("Witness", "W", &c), Some(&id("dave")));
}
