//! Regenerates `data/synthetic_pollution.csv` with the default generator settings.

use proxy_anchor::experiments::pollution::{write_synthetic_pollution, SyntheticPollution};

fn main() -> proxy_anchor::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_pollution.csv").to_string());
    let file = std::fs::File::create(&path).expect("cannot create output file");
    write_synthetic_pollution(&SyntheticPollution::default(), std::io::BufWriter::new(file))
}
