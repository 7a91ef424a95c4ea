//! Normalizing two slices, selecting variable genes per slice and taking the
//! union, then building the evaluation gene sets.

use histoexpr::preprocess::{preprocess_slices, resolve_gene_set, select_hvg, scale_to_total};
use histoexpr::synthgen::{generate, SynthConfig};

fn main() -> histoexpr::error::Result<()> {
    let slice = |seed| {
        generate(&SynthConfig {
            n_spots: 400,
            n_query: 0,
            n_genes: 120,
            n_zonated: 30,
            d_img: 8,
            seed,
            ..SynthConfig::default()
        })
        .map(|(ds, _)| ds)
    };
    let (a, b) = (slice(1)?, slice(1)?);

    let hvg_a = select_hvg(&scale_to_total(&a.expression, 1e4)?, 20)?;
    println!("slice 1 top variable genes: {:?}", &hvg_a.names(&a.gene_names)[..5]);

    let out = preprocess_slices(&[a, b], 20, 1e4)?;
    println!(
        "union keeps {} of 120 genes over {} spots",
        out.dataset.n_genes(),
        out.dataset.n_spots()
    );
    let labels = out.dataset.split.as_ref().expect("two slices are labelled");
    println!("split labels: {} .. {}", labels[0], labels[labels.len() - 1]);

    let ds = &out.dataset;
    for spec in ["heg", "hvg", "mg"] {
        let (set, missing) = resolve_gene_set(spec, &ds.expression, &ds.gene_names)?;
        println!("{:>3}: {} genes, {} names not found", set.label, set.len(), missing.len());
    }
    Ok(())
}
