//! Both solvers over generated benchmark datasets, written as a report.
//!
//! cargo run --release --example benchmark_compare -- [datasets] [out_dir]

use parasdm::bench::{compare, emit_report, RunConfig};
use parasdm::model::generate_dataset;
use parasdm::DatasetSpec;

fn main() -> parasdm::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let out = args.next().unwrap_or_else(|| "report".into());

    let datasets = (1..=count)
        .map(|seed| {
            Ok((
                format!("dataset_{seed:03}"),
                generate_dataset(&DatasetSpec::benchmark(seed))?,
            ))
        })
        .collect::<parasdm::Result<Vec<_>>>()?;
    let table = compare(&datasets, &RunConfig::default())?;
    for (s, l) in table.pairs() {
        println!(
            "{}  stagewise {:.6} ({:.3}s)  lifted {:.6} ({:.3}s)  ratio {:.4}",
            s.dataset_id, s.hard_cost, s.wall_time_s, l.hard_cost, l.wall_time_s, l.normalized_cost
        );
    }
    let summary = table.summary();
    println!("{}", serde_json::to_string_pretty(&summary)?);
    emit_report(&table, &out)?;
    println!("report written to {out}/");
    Ok(())
}
