//! Loads the shipped noun registry and templates and expands every pair.

use ctrip::corpus::{expand_prompts, shipped_registry, shipped_templates, Category};

fn main() -> anyhow::Result<()> {
    let registry = shipped_registry();
    let templates = shipped_templates();
    println!("{} nouns, {} templates", registry.len(), templates.len());

    let header: Vec<&str> = Category::ALL.iter().map(|c| c.code()).collect();
    println!("country  {}", header.join(" "));
    for (country, counts) in registry.category_counts() {
        let cells: Vec<String> = counts.iter().map(|n| n.to_string()).collect();
        println!("{:<8} {}", country.code(), cells.join(" "));
    }

    let prompts = expand_prompts(registry.nouns(), &templates)?;
    println!("{} base prompts, e.g.", prompts.len());
    for p in prompts.iter().step_by(2_500) {
        println!("  {}  {}", p.prompt_id, p.text);
    }
    Ok(())
}
