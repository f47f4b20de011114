//! The whole pipeline on offline backends. Pass an output directory, or a
//! temporary one is used.

use ctrip::pipeline::dry_run;

fn main() -> anyhow::Result<()> {
    let tmp = tempfile::tempdir()?;
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| tmp.path().join("run"));
    let summary = dry_run(&out)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    println!(
        "{}",
        std::fs::read_to_string(out.join("report/table2.csv"))?
    );
    Ok(())
}
