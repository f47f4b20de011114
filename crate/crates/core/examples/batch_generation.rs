//! Generates stub images for a few final prompts, then reruns the batch to
//! show that completed entries are kept.

use ctrip::generation::{plan_batch, run_batch, FinalPrompt, StubImageBackend};
use ctrip::refinement::ConfigId;

fn main() -> anyhow::Result<()> {
    let out = tempfile::tempdir()?;
    let prompts: Vec<FinalPrompt> = ConfigId::ALL
        .into_iter()
        .map(|config_id| FinalPrompt {
            prompt_id: "jp_furoshiki-t03".into(),
            noun_id: "jp_furoshiki".into(),
            config_id,
            text: format!("A furoshiki wrapped around a gift box ({config_id})"),
        })
        .collect();
    let requests = plan_batch(&prompts, 2);
    let backend = StubImageBackend::default();

    let first = run_batch(&requests, &backend, out.path(), 4)?;
    println!(
        "first run: {} generated, {} skipped",
        first.generated, first.skipped
    );
    for a in &first.artifacts {
        println!("  {}  {}", a.path.display(), &a.digest[..12]);
    }
    let second = run_batch(&requests, &backend, out.path(), 4)?;
    println!(
        "second run: {} generated, {} skipped",
        second.generated, second.skipped
    );
    Ok(())
}
