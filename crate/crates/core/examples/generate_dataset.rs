//! Generate the benchmark dataset for one seed and save it as JSON.
//!
//! cargo run --example generate_dataset -- 7 /tmp/dataset_007.json

use parasdm::model::generate_dataset;
use parasdm::{DatasetSpec, Network};

fn main() -> parasdm::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    let path = args.next().unwrap_or_else(|| format!("dataset_{seed:03}.json"));

    let net = generate_dataset(&DatasetSpec::benchmark(seed))?;
    net.save(&path)?;
    let back = Network::load(&path)?;
    assert_eq!(back, net);

    let (lo, hi) = net.points().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        (lo.min(p.x.min(p.y)), hi.max(p.x.max(p.y)))
    });
    println!(
        "{} nodes, {} facilities, coordinates in [{lo:.3}, {hi:.3}]",
        net.node_count(),
        net.facility_count()
    );
    println!("written to {path}");
    Ok(())
}
