//! Runs the region criterion on a few synthetic pairs in both domains.
//!
//! Style transfer keeps the structure but not the colours, so its distance
//! drops sharply in the edge domain; an unrelated texture stays far in both.

use forgecon::criterion::{check_infringement, load_raster, CriterionConfig, RepresentationDomain};
use forgecon::synth::{generate, SynthConfig};

fn main() -> forgecon::Result<()> {
    let dir = tempfile::tempdir()?;
    let config = SynthConfig { n_anchors: 1, n_dissimilar: 1, seed: 2, ..SynthConfig::default() };
    generate(&config, dir.path())?;
    let original = load_raster(&dir.path().join("originals/a00000.png"))?;

    let candidates = [
        "forgeries/a00000_adversarial_0.png",
        "forgeries/a00000_inpainting_0.png",
        "forgeries/a00000_cutmix_0.png",
        "forgeries/a00000_style_transfer_0.png",
        "distractors/d00000.png",
    ];
    for name in candidates {
        let generated = load_raster(&dir.path().join(name))?;
        for domain in [RepresentationDomain::Pixel, RepresentationDomain::Edge] {
            let cfg = CriterionConfig { domain, ..CriterionConfig::default() };
            let report = check_infringement(&generated, &original, &cfg)?;
            let c = report.closest.as_ref().expect("grid is never empty");
            println!(
                "{name:<38} {domain:<5} {:<10} {} {}x{}+{}+{} {:.4}/{:.4}",
                if report.infringing { "INFRINGING" } else { "clear" },
                c.transform,
                c.region.width,
                c.region.height,
                c.region.x,
                c.region.y,
                c.distance,
                c.threshold,
            );
        }
    }
    Ok(())
}
