use super::*;
use crate::diagnostics::codes;

fn corpus(name: &str) -> (String, Specification) {
    let path = format!("{}/../../corpus/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("read {path}: {e}"));
    (name.to_string(), lang::parse(&text).unwrap_or_else(|e| panic!("{name}: {e}")))
}

fn load(files: &[&str]) -> Loaded {
    let docs: Vec<_> = files.iter().map(|f| corpus(f)).collect();
    resolve(&docs)
}

fn errors(loaded: &Loaded) -> Vec<&Diagnostic> {
    loaded.diagnostics.iter().filter(|d| d.is_error()).collect()
}

#[test]
fn standalone_protocol_resolves_to_own_messages() {
    let loaded = load(&["listing1.bspl"]);
    let w = loaded.get("Witness").unwrap();
    let ids: Vec<_> = w.schemas.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, vec!["Witness/RequestApproval", "Witness/Approve", "Witness/Object"]);
    assert!(loaded.diagnostics.is_empty(), "{:?}", loaded.diagnostics);
}

#[test]
fn witness_checks_with_zero_diagnostics() {
    let loaded = load(&["listing1.bspl"]);
    assert!(loaded.diagnostics.is_empty(), "{:?}", loaded.diagnostics);
}

#[test]
fn court_wedding_flattens_witness() {
    let loaded = load(&["listing2.bspl", "listing1.bspl"]);
    assert!(errors(&loaded).is_empty(), "{:?}", errors(&loaded));
    let cw = loaded.get("CourtWedding").unwrap();
    // Four own messages plus three from Witness.
    assert_eq!(cw.schemas.len(), 7);
    // Identity: Witness's sig feeds the composition's private signature.
    let sig_idx = cw.identity[&("Witness".to_string(), "sig".to_string())];
    assert_eq!(cw.params[sig_idx].id, "signature");
    // Witness's J is the judge.
    let j_idx = cw.identity[&("Witness".to_string(), "J".to_string())];
    assert_eq!(cw.params[j_idx].id, "Judge");
    // Imported schemas keep their declaring protocol's id.
    assert!(cw.schemas.iter().any(|s| s.id == "Witness/RequestApproval"));
}

#[test]
fn transparent_offer_disjunction_matches_or_clause() {
    let loaded = load(&["listing9.bspl"]);
    assert!(errors(&loaded).is_empty(), "{:?}", errors(&loaded));
    let purchase = loaded.get("Purchase").unwrap();
    let acc = purchase.identity[&("TransparentOffer".to_string(), "acceptance".to_string())];
    assert_eq!(purchase.params[acc].id, "acceptance");
    let rej = purchase.identity[&("TransparentOffer".to_string(), "rejection".to_string())];
    assert_eq!(purchase.params[rej].id, "rejection");
    // oID aligns with pID even though the names differ.
    let oid = purchase.identity[&("TransparentOffer".to_string(), "oID".to_string())];
    assert_eq!(purchase.params[oid].id, "pID");
    // amount stays internal to the constituent.
    let amount = purchase.identity[&("TransparentOffer".to_string(), "amount".to_string())];
    assert_eq!(purchase.params[amount].id, "TransparentOffer/amount");
}

#[test]
fn late_bound_reference_defers_to_enactment() {
    let loaded = load(&["listing3.bspl"]);
    let p = loaded.get("Proposal").unwrap();
    assert_eq!(p.late_refs.len(), 1);
    let late = &p.late_refs[0];
    assert_eq!(p.params[late.target_param].id, "ceremony");
    assert!(p.params[late.target_param].is_protocol());
    assert_eq!(late.args.len(), 8);
}

#[test]
fn proposal_original_has_dead_accept() {
    let loaded = load(&["listing3.bspl"]);
    let errs = errors(&loaded);
    assert_eq!(errs.len(), 1, "{errs:?}");
    assert_eq!(errs[0].code, codes::DEAD_DEPENDENCY);
    assert!(errs[0].message.contains("accept"), "{}", errs[0].message);
}

#[test]
fn self_contained_original_flags_undeclared_mid() {
    let loaded = load(&["listing5.bspl", "listing1.bspl"]);
    let errs = errors(&loaded);
    assert_eq!(errs.len(), 1, "{errs:?}");
    assert_eq!(errs[0].code, codes::DEAD_DEPENDENCY);
    assert!(errs[0].message.contains("mID"));
    assert!(loaded
        .diagnostics
        .iter()
        .any(|d| d.code == codes::UNDECLARED_PARAMETER && d.message.contains("mID")));
}

#[test]
fn clean_corpus_listings_have_no_errors() {
    let sets: Vec<Vec<&str>> = vec![
        vec!["listing1.bspl"],
        vec!["listing2.bspl", "listing1.bspl"],
        vec!["listing6.bspl"],
        vec!["listing7.bspl", "order_deliver.bspl"],
        vec!["listing8.bspl"],
        vec!["listing9.bspl"],
        vec!["listing13.bspl"],
        vec!["listing14.bspl"],
    ];
    for files in sets {
        let loaded = load(&files);
        assert!(
            errors(&loaded).is_empty(),
            "{files:?} should check clean: {:?}",
            errors(&loaded)
        );
    }
}

#[test]
fn singular_set_reference_resolves_with_warning() {
    let loaded = load(&["listing14.bspl"]);
    assert!(errors(&loaded).is_empty());
    assert!(loaded
        .diagnostics
        .iter()
        .any(|d| d.code == codes::SET_SINGULAR && d.message.contains("protocols")));
}

#[test]
fn completion_formula_witness() {
    let (_, spec) = corpus("listing1.bspl");
    let formula = completion_formula(&spec.declarations[0]);
    assert_eq!(
        formula,
        Formula::And(vec![
            Formula::Bound("J".into()),
            Formula::Bound("W".into()),
            Formula::Bound("cID".into()),
            Formula::Or(vec![Formula::Bound("sig".into()), Formula::Bound("objection".into())]),
        ])
    );
}

#[test]
fn completion_formula_court_wedding() {
    let (_, spec) = corpus("listing2.bspl");
    let formula = completion_formula(&spec.declarations[0]);
    assert_eq!(
        formula,
        Formula::And(vec![
            Formula::Bound("R".into()),
            Formula::Bound("E".into()),
            Formula::Bound("Judge".into()),
            Formula::Bound("Witness".into()),
            Formula::Bound("cID".into()),
            Formula::Or(vec![
                Formula::And(vec![
                    Formula::Bound("vowR".into()),
                    Formula::Bound("vowE".into()),
                    Formula::Bound("license".into()),
                ]),
                Formula::Bound("objection".into()),
            ]),
        ])
    );
}

#[test]
fn completion_formula_single_message_is_payload_conjunction() {
    let spec = lang::parse("a -> b: M[out key k, out x, out y]").unwrap();
    let formula = completion_formula(&spec.declarations[0]);
    assert_eq!(
        formula,
        Formula::And(vec![
            Formula::Bound("k".into()),
            Formula::Bound("x".into()),
            Formula::Bound("y".into()),
        ])
    );
}

#[test]
fn opt_parameters_stay_out_of_completion() {
    let spec = lang::parse("P(out key k, out x, opt note) { a -> b: M[out k, out x, opt note] }")
        .unwrap();
    let formula = completion_formula(&spec.declarations[0]);
    assert_eq!(
        formula,
        Formula::And(vec![Formula::Bound("k".into()), Formula::Bound("x".into())])
    );
}

#[test]
fn key_model_support_locals() {
    let loaded = load(&["listing8.bspl"]);
    let support = loaded.get("Support").unwrap();
    assert_eq!(support.key_model.global_keys, vec!["ID"]);
    let locals: Vec<_> = support.key_model.local_keys.iter().map(|l| l.name.as_str()).collect();
    assert_eq!(locals, vec!["brID", "srID"]);
    for l in &support.key_model.local_keys {
        assert!(l.scope.contains(&"ID".to_string()));
    }
}

#[test]
fn key_model_missing_keys_is_flagged() {
    let loaded =
        resolve_text("<memory>", "P(in A, B: role, out x) { A -> B: M[out x] }").unwrap();
    assert!(loaded
        .diagnostics
        .iter()
        .any(|d| d.code == codes::NO_KEY));
    let p = loaded.get("P").unwrap();
    assert!(p.key_model.global_keys.is_empty());
    assert!(p.key_model.local_keys.is_empty());
}

#[test]
fn invertible_keys_detected() {
    let loaded = load(&["listing7.bspl", "order_deliver.bspl"]);
    assert!(errors(&loaded).is_empty(), "{:?}", errors(&loaded));
    let inv = loaded.get("Invertible").unwrap();
    assert_eq!(inv.key_model.global_keys, vec!["oID", "dID"]);
    assert_eq!(
        inv.key_model.invertible,
        vec![("oID".to_string(), "dID".to_string())]
    );
}

#[test]
fn adornment_conflict_on_externally_bound_parameter() {
    let text = "
Sub(in A, B: role, out key id, out v) {
  A -> B: M[out id, out v]
}
Comp(in A, B: role, in key id, in v) {
  Sub(A, B, id, v)
  B -> A: Done[in id, in v, out ok]
}";
    let loaded = resolve_text("<memory>", text).unwrap();
    assert!(loaded
        .diagnostics
        .iter()
        .any(|d| d.code == codes::ADORNMENT_CONFLICT));
}

#[test]
fn unknown_reference_is_an_error() {
    let loaded = load(&["listing2.bspl"]); // Witness not loaded
    let errs = errors(&loaded);
    assert!(errs.iter().any(|d| d.code == codes::UNKNOWN_REFERENCE));
}

#[test]
fn arity_mismatch_is_an_error() {
    let text = "
Sub(in A, B: role, in key id, out v) {
  A -> B: M[in id, out v]
}
Comp(out A, B: role, out key id, out v, out w, out q, out r) {
  out A -> out B: Start[out id, out v, out w, out q, out r]
  Sub(A, B, id, v, w, q, r)
}";
    let loaded = resolve_text("<memory>", text).unwrap();
    assert!(errors(&loaded).iter().any(|d| d.code == codes::ARITY_MISMATCH));
}

#[test]
fn double_bind_risk_flagged_in_same_context() {
    let loaded = load(&["listing6.bspl"]);
    let dbl: Vec<_> = loaded
        .diagnostics
        .iter()
        .filter(|d| d.code == codes::DOUBLE_BIND_RISK)
        .collect();
    // result via Accept/Reject (reported for the constituent and again in
    // the flattened composition) and transaction via Ship/Cancel.
    assert!(dbl.iter().any(|d| d.message.contains("result")), "{dbl:?}");
    assert!(dbl.iter().any(|d| d.message.contains("transaction")), "{dbl:?}");
}

#[test]
fn double_bind_not_flagged_across_distinct_local_contexts() {
    let loaded = load(&["listing8.bspl"]);
    assert!(!loaded
        .diagnostics
        .iter()
        .any(|d| d.code == codes::DOUBLE_BIND_RISK));
}

#[test]
fn unbindable_public_is_flagged() {
    let loaded = load(&["listing4.bspl"]);
    let warns: Vec<_> = loaded
        .diagnostics
        .iter()
        .filter(|d| d.code == codes::UNBINDABLE_PUBLIC)
        .collect();
    // vowR, vowE, license, objection have no producers in the metaprotocol.
    assert_eq!(warns.len(), 4, "{warns:?}");
    assert!(errors(&loaded).is_empty());
}

#[test]
fn local_key_without_global_scope_is_an_error() {
    let loaded = resolve_text(
        "<memory>",
        "P(in A, B: role, local key n, out x) { A -> B: M[out n, out x] }",
    )
    .unwrap();
    assert!(errors(&loaded).iter().any(|d| d.code == codes::LOCAL_KEY_SCOPE));
}

#[test]
fn flattening_is_deterministic_and_order_independent() {
    let a = load(&["listing2.bspl", "listing1.bspl"]);
    let b = load(&["listing1.bspl", "listing2.bspl"]);
    let cw_a = a.get("CourtWedding").unwrap();
    let cw_b = b.get("CourtWedding").unwrap();
    let ids_a: Vec<_> = cw_a.schemas.iter().map(|s| s.id.clone()).collect();
    let ids_b: Vec<_> = cw_b.schemas.iter().map(|s| s.id.clone()).collect();
    assert_eq!(ids_a, ids_b);
    assert_eq!(cw_a.identity, cw_b.identity);
    let params_a: Vec<_> = cw_a.params.iter().map(|p| p.id.clone()).collect();
    let params_b: Vec<_> = cw_b.params.iter().map(|p| p.id.clone()).collect();
    assert_eq!(params_a, params_b);
}

#[test]
fn message_reference_reuses_elementary_schema() {
    let loaded = load(&["purchase_pay.bspl", "transfer.bspl"]);
    assert!(errors(&loaded).is_empty(), "{:?}", errors(&loaded));
    let pp = loaded.get("PurchasePay").unwrap();
    let transfer = pp.schema("Transfer").expect("Transfer schema reused by id");
    assert_eq!(transfer.declaring_protocol, "Transfer");
    // ID feeds pID, amount feeds payment, C feeds S.
    let id_idx = pp.identity[&("Transfer".to_string(), "ID".to_string())];
    assert_eq!(pp.params[id_idx].id, "pID");
    let amount_idx = pp.identity[&("Transfer".to_string(), "amount".to_string())];
    assert_eq!(pp.params[amount_idx].id, "payment");
    let c_idx = pp.identity[&("Transfer".to_string(), "C".to_string())];
    assert_eq!(pp.params[c_idx].id, "S");
}

#[test]
fn initiator_candidates_for_court_wedding() {
    let loaded = load(&["listing2.bspl", "listing1.bspl"]);
    let cw = loaded.get("CourtWedding").unwrap();
    let names: Vec<_> = cw
        .initiator_candidates
        .iter()
        .map(|&i| cw.params[i].id.as_str())
        .collect();
    assert!(names.contains(&"Judge"), "{names:?}");
}

#[test]
fn completion_monotonicity() {
    // Adding bindings never turns a satisfied formula unsatisfied.
    let (_, spec) = corpus("listing2.bspl");
    let formula = completion_formula(&spec.declarations[0]);
    let vars = ["R", "E", "Judge", "Witness", "cID", "vowR", "vowE", "license", "objection"];
    for mask in 0u32..(1 << vars.len()) {
        let bound = |name: &str| -> bool {
            vars.iter().position(|v| *v == name).map(|i| mask & (1 << i) != 0).unwrap_or(false)
        };
        if formula.eval(&bound) {
            for extra in 0..vars.len() {
                let grown = mask | (1 << extra);
                let bound2 = |name: &str| -> bool {
                    vars.iter()
                        .position(|v| *v == name)
                        .map(|i| grown & (1 << i) != 0)
                        .unwrap_or(false)
                };
                assert!(formula.eval(&bound2), "monotonicity broke at {mask:b} + {extra}");
            }
        }
    }
}
