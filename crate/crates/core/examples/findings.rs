use std::time::Instant;

use domadapt::experiments::{default_finding_spec, run_finding_suite, FindingOptions};

fn main() {
    let seeds: Vec<u64> = std::env::args().skip(1).map(|s| s.parse().unwrap()).collect();
    let seeds = if seeds.is_empty() { vec![1, 2, 3, 4, 5] } else { seeds };
    let t = Instant::now();
    let report = run_finding_suite(&default_finding_spec(), &seeds, &FindingOptions::default()).unwrap();
    print!("{}", report.to_tsv());
    print!("{}", report.summary());
    println!("params {} elapsed {:.1}s", report.parameter_count, t.elapsed().as_secs_f64());
}
