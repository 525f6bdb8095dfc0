//! Self-contained synthetic dataset for trying the pipeline end to end:
//! four correlated trait bundles, Male / Young / Attractive columns with a
//! cluster-by-sex interaction in the label, and small grayscale images in
//! which attractive faces carry a bright patch in the top-left quadrant.

use std::path::Path;

use audit_core::ingest::{synth_generate, AttributeTable, BundleSpec, Generator, PartitionMap, Provenance, SynthSpec};
use audit_core::vision::image::encode_image;
use audit_core::vision::ImageTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bundle::Bundle;
use crate::config::derive_seed;
use crate::error::Result;

pub struct FixtureSpec {
    pub rows: usize,
    pub side: usize,
    pub seed: u64,
}

const BUNDLES: [(usize, f64, f64); 4] = [(4, 0.35, 0.6), (3, 0.25, 0.5), (3, 0.4, 0.55), (2, 0.5, 0.6)];

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn config_text(seed: u64) -> String {
    format!(
        r#"# Generated by `audit fixture`. Paths are relative to this file.
attributes = "list_attr.txt"
partition = "partition.txt"
image_manifest = "manifest.csv"
out_dir = "report"
seed = {seed}

# Sex and age are singletons in the correlation structure; keeping them out
# of clustering leaves every cluster x sex cell populated.
cluster_exclude = ["Male", "Young"]
k = 4
k_max = 8
heatmap_cell = 16

boost_max_depth = 3
boost_n_rounds = 200
boost_early_stopping = 20

cnn_epochs = 4
cnn_train_batch = 32
cnn_learning_rate = 0.01
top_k = 16
"#
    )
}

pub fn write_fixture(spec: &FixtureSpec, out: &Path) -> Result<Bundle> {
    let (traits, _) = synth_generate(&SynthSpec {
        n_rows: spec.rows,
        generator: Generator::LatentBundle {
            bundles: BUNDLES
                .iter()
                .map(|&(size, prevalence, correlation)| BundleSpec { size, prevalence, correlation })
                .collect(),
        },
        seed: derive_seed(spec.seed, "fixture-traits"),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "fixture-labels"));

    let mut starts = vec![0];
    for (size, ..) in BUNDLES {
        starts.push(starts.last().unwrap() + size);
    }
    let m = traits.n_cols();
    let mut names = traits.attribute_names().to_vec();
    names.extend(["Male", "Young", "Attractive"].map(String::from));
    let mut values = Vec::with_capacity(spec.rows * (m + 3));
    for i in 0..spec.rows {
        let row = traits.row(i);
        let share = |b: usize| {
            let cols = &row[starts[b]..starts[b + 1]];
            cols.iter().map(|&v| f64::from(v)).sum::<f64>() / cols.len() as f64
        };
        let male = u8::from(rng.random::<f64>() < 0.42);
        let young = u8::from(rng.random::<f64>() < 0.75);
        let (mf, yf) = (f64::from(male), f64::from(young));
        let eta = -0.2 + 1.4 * share(0) - 1.0 * share(2) + 0.8 * yf - 1.2 * mf + 1.5 * mf * share(1);
        let attractive = u8::from(rng.random::<f64>() < sigmoid(eta));
        values.extend_from_slice(row);
        values.extend([male, young, attractive]);
    }
    let ids: Vec<String> = (1..=spec.rows).map(|i| format!("{i:06}.pgm")).collect();
    let table = AttributeTable::new(ids, names, values, Provenance::Synthetic)?;

    let mut bundle = Bundle::create(out)?;
    bundle.write("list_attr.txt", table.to_celeba_format())?;
    bundle.write("partition.txt", PartitionMap::random(&table, derive_seed(spec.seed, "fixture-split")).to_text())?;

    let (side, half) = (spec.side, spec.side / 2);
    let patch = (side / 4).max(1);
    let attractive = table.column_by_name("Attractive")?;
    let (male, young) = (table.column_by_name("Male")?, table.column_by_name("Young")?);
    let mut manifest = String::from("row_id,path,Young,Male,Attractive\n");
    for (i, id) in table.row_ids().iter().enumerate() {
        let mut px: Vec<f64> = (0..side * side).map(|_| rng.random_range(0.0..0.25)).collect();
        if attractive[i] == 1 {
            let (oy, ox) = (rng.random_range(0..=half - patch), rng.random_range(0..=half - patch));
            let level = rng.random_range(0.75..1.0);
            for y in oy..oy + patch {
                for x in ox..ox + patch {
                    px[y * side + x] = level;
                }
            }
        }
        let img = ImageTensor::new(1, side, side, px)?;
        bundle.write(&format!("images/{id}"), encode_image(&img)?)?;
        manifest.push_str(&format!("{id},images/{id},{},{},{}\n", young[i], male[i], attractive[i]));
    }
    bundle.write("manifest.csv", manifest)?;
    bundle.write("audit.toml", config_text(spec.seed))?;
    Ok(bundle)
}
