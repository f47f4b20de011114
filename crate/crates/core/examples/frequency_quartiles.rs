//! Counts noun mentions in a caption stream and splits the nouns into
//! frequency quartiles.

use std::io::Cursor;

use ctrip::corpus::{shipped_registry, Country};
use ctrip::evaluation::{assign_quartiles, count_frequencies, report::country_quartiles};
use ctrip::pipeline::synthetic_captions;

fn main() -> anyhow::Result<()> {
    let registry = shipped_registry();
    let captions = synthetic_captions(registry.nouns(), 7);
    println!("{} caption lines", captions.lines().count());

    let freqs = count_frequencies(Cursor::new(captions), registry.nouns())?;
    let quartiles = assign_quartiles(&freqs)?;
    for country in Country::ALL {
        let per = &country_quartiles(&quartiles, registry.nouns())[&country];
        println!("{:<3} Q1..Q4 = {:?}", country.code(), per);
    }
    let top = quartiles.iter().rev().take(3);
    for q in top {
        println!(
            "frequent: {} ({} captions, {})",
            q.noun_id, q.count, q.group
        );
    }
    Ok(())
}
