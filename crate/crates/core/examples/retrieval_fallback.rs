//! Encyclopedia-first retrieval with a web fallback, on in-memory sources.

use ctrip::corpus::{Category, Country, CultureNoun, NounForm};
use ctrip::retrieval::{FixtureEncyclopedia, FixtureWebSearch, RetrievalConfig, Retriever};

fn main() -> anyhow::Result<()> {
    let nouns = [
        ("kr_hangari", "Hangari"),
        ("kr_jangdok", "Jangdokdae"),
        ("kr_bojagi", "Bojagi"),
    ]
    .map(|(id, name)| {
        CultureNoun::new(
            id,
            name,
            Country::KR,
            Category::UtensilsTools,
            NounForm::Transliteration,
        )
    });
    let encyclopedia = FixtureEncyclopedia::new([
        (
            "Hangari".to_string(),
            "Hangari is a large Korean earthenware jar. ".repeat(12),
        ),
        (
            "Bojagi".to_string(),
            "Bojagi is a wrapping cloth.".to_string(),
        ),
    ]);
    let web = FixtureWebSearch::new(nouns.iter().map(|n| {
        (
            n.name.clone(),
            vec![
                format!("{} appears in many travel blogs and museum pages. ", n.name).repeat(4);
                2
            ],
        )
    }));
    let dir = tempfile::tempdir()?;
    let cfg = RetrievalConfig {
        cache_dir: Some(dir.path().to_path_buf()),
        ..RetrievalConfig::default()
    };
    let retriever = Retriever::new(&encyclopedia, &web, cfg)?;
    for noun in &nouns {
        let info = retriever.retrieve(noun)?;
        println!(
            "{:<11} {:?} ({} chars)",
            noun.name, info.source, info.char_count
        );
    }
    // cached: the sources are not asked again
    let before = encyclopedia.calls() + web.calls();
    for noun in &nouns {
        retriever.retrieve(noun)?;
    }
    println!(
        "source calls on rerun: {}",
        encyclopedia.calls() + web.calls() - before
    );
    Ok(())
}
