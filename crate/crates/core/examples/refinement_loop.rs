//! Runs the four prompt configurations for one noun on the offline
//! completion model and prints the loop trace.

use chrono::Utc;
use ctrip::corpus::{expand_prompts, shipped_registry, shipped_templates};
use ctrip::refinement::{
    apply_configuration, ConfigId, MockCompletion, PromptTemplates, RefinementSettings,
};
use ctrip::retrieval::{InfoSource, RawInfo};

fn main() -> anyhow::Result<()> {
    let registry = shipped_registry();
    let noun = registry
        .nouns()
        .first()
        .ok_or_else(|| anyhow::anyhow!("empty registry"))?;
    let base = expand_prompts(std::slice::from_ref(noun), &shipped_templates()[..1])?.remove(0);
    let info = RawInfo::new(
        &noun.id,
        InfoSource::Encyclopedia,
        format!("{} is a traditional item with a long history. ", noun.name).repeat(10),
        Utc::now(),
    );
    let backend = MockCompletion::new();
    let settings = RefinementSettings::default();
    let templates = PromptTemplates::shipped();

    println!("noun: {} ({})", noun.name, noun.country.name());
    for config in ConfigId::ALL {
        let out = apply_configuration(
            config,
            noun,
            Some(&info),
            &base,
            &settings,
            &templates,
            &backend,
        )?;
        println!("\n[{config}] {}", out.text);
        if let Some(trace) = out.trace {
            for it in &trace.iterations {
                println!(
                    "  iteration {}: total {} / threshold {}",
                    it.refined.iteration, it.score.total, trace.threshold
                );
            }
            println!("  stopped: {:?}", trace.stop_reason);
        }
    }
    Ok(())
}
