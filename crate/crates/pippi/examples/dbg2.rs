use pippi::harness::{run_scenario, Scenario};
use std::path::Path;
fn main() {
    for seed in 0..20u64 {
        let scenario = Scenario::load(Path::new("scenarios/wedding.json")).unwrap();
        let report = run_scenario(scenario, seed).unwrap();
        let fails: Vec<_> = report.assertions.iter().filter(|a| !a.passed).collect();
        if !fails.is_empty() {
            println!("seed {seed}: {} fails", fails.len());
            for f in fails { println!("  {} | {}", f.description, f.detail); }
            if seed == 2 || fails.len() > 0 {
                for l in &report.trace { println!("  {l}"); }
                for q in report.agents.values() {
                    for m in q.adapter.quarantined() { println!("  QUAR-LEFT {} {}", q.adapter.address(), m.encode()); }
                }
                break;
            }
        }
    }
    println!("done");
}
