use pippi::harness::{run_scenario, Scenario};
use std::path::Path;
fn main() {
    let name = std::env::args().nth(1).unwrap_or("purchase_accept.json".into());
    let scenario = Scenario::load(Path::new(&format!("scenarios/{name}"))).unwrap();
    let report = run_scenario(scenario, 42).unwrap();
    for l in &report.trace {
        println!("{l}");
    }
    println!("status {:?}", report.status);
    for a in &report.assertions {
        println!("{} {} | {}", if a.passed { "PASS" } else { "FAIL" }, a.description, a.detail);
    }
    for (addr, agent) in &report.agents {
        println!("--- {addr}");
        for ((p, n, k), v) in agent.adapter.store.bindings() {
            println!("  {p} {n} [{k}] = {v}");
        }
        for q in agent.adapter.quarantined() {
            println!("  QUAR {}", q.encode());
        }
    }
}
