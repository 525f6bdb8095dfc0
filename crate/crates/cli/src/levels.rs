//! The audit levels. Each `run_*` reads what it needs from the config,
//! writes its artifacts under `<out_dir>/<level>/`, and returns anything a
//! later level can reuse.

use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use audit_core::boost::{self, hyper_search, shap_summary_by_group, train_gbdt, tree_shap, ParamGrid, SearchSpace};
use audit_core::cluster::{
    assign_clusters, cut_k, dissimilarity, elbow, hac_average, heatmap_ppm, leaf_order, pearson_matrix,
    AssignmentResult,
};
use audit_core::inference::{build_design, fit_logit, group_proportions, refit_excluding, vif, Sex, INTERCEPT};
use audit_core::ingest::{parse_attribute_file, AttributeTable, PartitionMap, Provenance, Split};
use audit_core::metrics::{average_precision, class_report, roc_auc, RankedPredictions, AP_TIE_CONVENTION};
use audit_core::vision::image::{encode_image, parse_manifest, plane_to_pgm, read_image};
use audit_core::vision::{
    self, average_faces, average_maps, grad_cam, overlay_ppm, save_checkpoint, subgroup_metrics, topk_select,
    train_cnn, ImageTensor, Subgroup,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::bundle::Bundle;
use crate::config::{derive_seed, AuditConfig};
use crate::error::{CliError, Result};

pub fn load_table(config: &AuditConfig) -> Result<AttributeTable> {
    let path = config
        .attributes
        .as_deref()
        .ok_or_else(|| CliError::missing("attribute file", "config has no `attributes` path"))?;
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(parse_attribute_file(BufReader::new(file))?)
}

/// The configured partition aligned to `table`, or a seeded 80/10/10 split
/// that is written to `<rel>` in the bundle.
fn load_partition(config: &AuditConfig, table: &AttributeTable, bundle: &mut Bundle, rel: &str) -> Result<PartitionMap> {
    match &config.partition {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            Ok(PartitionMap::parse(&text, table)?)
        }
        None => {
            let seed = derive_seed(config.seed, "partition");
            bundle.record_seed("partition", seed);
            let p = PartitionMap::random(table, seed);
            bundle.write(rel, p.to_text())?;
            Ok(p)
        }
    }
}

fn require_column(table: &AttributeTable, name: &str) -> Result<Vec<u8>> {
    Ok(table.column_by_name(name)?)
}

// ---- level 1: clustering -------------------------------------------------

#[derive(Serialize)]
struct MatrixJson<'a> {
    names: &'a [String],
    values: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct ElbowJson<'a> {
    points: &'a [(usize, f64)],
    suggested_k: Option<usize>,
}

pub fn run_cluster(config: &AuditConfig, table: &AttributeTable, bundle: &mut Bundle) -> Result<AssignmentResult> {
    let mut drop: Vec<&str> = config.cluster_exclude.iter().map(String::as_str).collect();
    if table.column_index(&config.label).is_some() {
        drop.push(&config.label);
    }
    let traits = table.drop_columns(&drop)?;
    let corr = pearson_matrix(&traits)?;
    let d = dissimilarity(&corr);
    let dend = hac_average(&d)?;
    let model = cut_k(&dend, config.k)?;
    let assignments = assign_clusters(&traits, &model)?;

    let m = corr.len();
    let values = (0..m).map(|i| (0..m).map(|j| corr.get(i, j)).collect()).collect();
    bundle.write_table("cluster/correlation", corr.to_csv(), &MatrixJson { names: corr.names(), values })?;
    bundle.write("cluster/dissimilarity.csv", d.to_csv())?;
    bundle.write("cluster/correlation_heatmap.ppm", heatmap_ppm(&corr.reordered(&leaf_order(&dend)), config.heatmap_cell))?;
    bundle.write("cluster/dendrogram.json", dend.to_json())?;
    bundle.write_table("cluster/membership", model.to_csv(), &model)?;

    let hi = config.k_max.min(m);
    if config.k_min <= hi {
        let curve = elbow(&d, &dend, config.k_min..=hi)?;
        bundle.write_table(
            "cluster/elbow",
            curve.to_csv(),
            &ElbowJson { points: &curve.points, suggested_k: curve.suggest_k() },
        )?;
    }
    bundle.write("cluster/assignments.csv", assignments.to_csv())?;
    bundle.write("cluster/assignments.json", serde_json::to_string(&assignments).expect("serializes"))?;
    Ok(assignments)
}

/// Assignments from the config's `assignments` file, checked against the
/// table; `None` when the config names no such file.
fn load_assignments(config: &AuditConfig, table: &AttributeTable) -> Result<Option<AssignmentResult>> {
    let Some(path) = &config.assignments else { return Ok(None) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::missing(format!("assignment file {}", path.display()), e.to_string()))?;
    let a = AssignmentResult::from_csv(&text)?;
    let stale = |detail: String| CliError::missing(format!("assignment file {}", path.display()), detail);
    if a.row_ids != table.row_ids() {
        return Err(stale("its image ids do not match the attribute file".into()));
    }
    if a.k != config.k {
        return Err(stale(format!("it has {} clusters but the config asks for k = {}", a.k, config.k)));
    }
    Ok(Some(a))
}

pub fn assignments_for(config: &AuditConfig, table: &AttributeTable, bundle: &mut Bundle) -> Result<AssignmentResult> {
    match load_assignments(config, table)? {
        Some(a) => Ok(a),
        None => run_cluster(config, table, bundle),
    }
}

// ---- level 1: cluster x sex statistics -----------------------------------

fn subset_assignments(a: &AssignmentResult, rows: &[usize]) -> AssignmentResult {
    AssignmentResult {
        k: a.k,
        row_ids: rows.iter().map(|&i| a.row_ids[i].clone()).collect(),
        cluster: rows.iter().map(|&i| a.cluster[i]).collect(),
        ratios: rows.iter().flat_map(|&i| a.ratios_of(i).iter().copied()).collect(),
        tie: rows.iter().map(|&i| a.tie[i]).collect(),
    }
}

pub fn run_regress(
    config: &AuditConfig,
    table: &AttributeTable,
    assignments: &AssignmentResult,
    bundle: &mut Bundle,
) -> Result<()> {
    let rows: Vec<usize> = match config.regress_split.split() {
        None => (0..table.n_rows()).collect(),
        Some(split) => load_partition(config, table, bundle, "partition.txt")?.rows(split),
    };
    let pick = |col: Vec<u8>| -> Vec<u8> { rows.iter().map(|&i| col[i]).collect() };
    let sex = pick(require_column(table, &config.sex_attribute)?);
    let label = pick(require_column(table, &config.label)?);
    let a = subset_assignments(assignments, &rows);

    let stats = group_proportions(&a, &sex, &label)?;
    bundle.write_table("regress/group_proportions", stats.to_csv(), &stats)?;

    let design = build_design(&a, &sex, &label, config.reference())?;
    let fit = fit_logit(&design)?;
    bundle.write_table("regress/logit", fit.to_csv(), &fit)?;

    let report = vif(&design, &fit)?;
    bundle.write_table("regress/collinearity", report.to_csv(), &report)?;

    let drop: Vec<&str> = report
        .vif
        .iter()
        .filter(|e| e.predictor != INTERCEPT && e.vif.value() > config.vif_threshold)
        .map(|e| e.predictor.as_str())
        .collect();
    if !drop.is_empty() {
        let (reduced, cmp) = refit_excluding(&design, &drop)?;
        bundle.write_table("regress/reduced_logit", reduced.to_csv(), &reduced)?;
        let mut csv = String::from("predictor,full_coef,reduced_coef,full_p,reduced_p,sign_agrees,significance_agrees\n");
        for r in &cmp.rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                r.predictor, r.full_coef, r.reduced_coef, r.full_p, r.reduced_p, r.sign_agrees, r.significance_agrees
            );
        }
        bundle.write_table("regress/robustness", csv, &cmp)?;
    }
    Ok(())
}

// ---- level 2: boosted model and attributions ------------------------------

#[derive(Serialize)]
struct BoostMetrics {
    n_train: usize,
    n_val: usize,
    n_test: usize,
    n_features: usize,
    n_trees: usize,
    test_roc_auc: Option<f64>,
    test_average_precision: Option<f64>,
    ap_tie_convention: &'static str,
    test_report: audit_core::metrics::ClassReport,
}

fn sex_groups(sex: &[u8]) -> Vec<String> {
    sex.iter().map(|&s| Sex::from_indicator(s).label().to_lowercase()).collect()
}

pub fn run_shap(config: &AuditConfig, table: &AttributeTable, bundle: &mut Bundle) -> Result<()> {
    let partition = load_partition(config, table, bundle, "partition.txt")?;
    let mut drop = vec![config.label.as_str()];
    drop.extend(config.boost_exclude.iter().map(String::as_str));
    let features = table.drop_columns(&drop)?;
    let label = require_column(table, &config.label)?;
    let sex = require_column(table, &config.sex_attribute)?;

    let part = |s: Split| {
        let rows = partition.rows(s);
        let y: Vec<u8> = rows.iter().map(|&i| label[i]).collect();
        (features.select_rows(&rows), y, rows)
    };
    let (x_train, y_train, _) = part(Split::Train);
    let (x_val, y_val, _) = part(Split::Val);
    let (x_test, y_test, test_rows) = part(Split::Test);
    if x_test.n_rows() == 0 || x_train.n_rows() == 0 {
        return Err(CliError::missing("partition", "training and test splits must both be non-empty"));
    }

    let seed = derive_seed(config.seed, "boost");
    bundle.record_seed("boost", seed);
    let mut params = config.boost_params(seed);
    if config.search_trials > 0 {
        let search_seed = derive_seed(config.seed, "search");
        bundle.record_seed("search", search_seed);
        let space = SearchSpace::Grid(ParamGrid { base: params, ..ParamGrid::default() });
        let (best, report) =
            hyper_search(&x_train, &y_train, &space, config.search_trials, config.search_folds, search_seed)?;
        bundle.write_table("shap/search", report.to_csv(), &report)?;
        params = best;
    }
    let valid = (x_val.n_rows() > 0).then_some((&x_val, y_val.as_slice()));
    let model = train_gbdt(&x_train, &y_train, &params, valid)?;
    bundle.write("shap/model.json", model.to_json())?;

    let proba = boost::predict_proba(&model, &x_test)?;
    let ranked = RankedPredictions::new(proba.clone(), y_test.clone())?;
    let predicted: Vec<u8> = proba.iter().map(|&p| u8::from(p >= boost::THRESHOLD)).collect();
    let metrics = BoostMetrics {
        n_train: x_train.n_rows(),
        n_val: x_val.n_rows(),
        n_test: x_test.n_rows(),
        n_features: features.n_cols(),
        n_trees: model.trees.len(),
        test_roc_auc: roc_auc(&ranked),
        test_average_precision: average_precision(&ranked),
        ap_tie_convention: AP_TIE_CONVENTION,
        test_report: class_report(&predicted, &y_test)?,
    };
    bundle.write_json("shap/metrics.json", &metrics)?;
    let mut csv = String::from("image_id,label,probability\n");
    for ((id, y), p) in x_test.row_ids().iter().zip(&y_test).zip(&proba) {
        let _ = writeln!(csv, "{id},{y},{p}");
    }
    bundle.write("shap/predictions.csv", csv)?;

    let groups = sex_groups(&test_rows.iter().map(|&i| sex[i]).collect::<Vec<_>>());
    let att = tree_shap(&model, &x_test)?;
    bundle.write("shap/attributions.csv", att.to_csv(&x_test, Some(&groups)))?;
    bundle.write("shap/attributions.json", serde_json::to_string(&att).expect("serializes"))?;
    let summary = shap_summary_by_group(&att, &x_test, &groups)?;
    bundle.write_table("shap/summary", summary.to_csv(), &summary)?;
    Ok(())
}

// ---- level 3: saliency ----------------------------------------------------

#[derive(Serialize)]
struct SaliencyGroup {
    subgroup: Subgroup,
    selected: usize,
    mean_probability: Option<f64>,
}

#[derive(Serialize)]
struct SaliencySummary {
    target_layer: usize,
    top_k: usize,
    normalization: &'static str,
    groups: Vec<SaliencyGroup>,
}

pub fn run_saliency(config: &AuditConfig, bundle: &mut Bundle) -> Result<()> {
    let path = config
        .image_manifest
        .as_deref()
        .ok_or_else(|| CliError::missing("image manifest", "config has no `image_manifest` path"))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let entries = parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))?;
    let images: Vec<ImageTensor> = entries.par_iter().map(|e| read_image(&e.path)).collect::<std::result::Result<_, _>>()?;

    // The three label columns double as a table so the shared partition
    // machinery can align splits to manifest rows.
    let meta = AttributeTable::new(
        entries.iter().map(|e| e.row_id.clone()).collect(),
        vec!["Young".into(), "Male".into(), "Attractive".into()],
        entries.iter().flat_map(|e| [e.young, e.male, e.attractive]).collect(),
        Provenance::Parsed,
    )?;
    let partition = load_partition(config, &meta, bundle, "saliency/partition.txt")?;
    let gather = |rows: &[usize]| -> (Vec<ImageTensor>, Vec<u8>) {
        rows.iter().map(|&i| (images[i].clone(), entries[i].attractive)).unzip()
    };
    let train_rows = partition.rows(Split::Train);
    let test_rows = partition.rows(Split::Test);
    if train_rows.is_empty() || test_rows.is_empty() {
        return Err(CliError::missing("partition", "training and test splits must both be non-empty"));
    }
    let (train_x, train_y) = gather(&train_rows);
    let (test_x, test_y) = gather(&test_rows);

    let seed = derive_seed(config.seed, "cnn");
    bundle.record_seed("cnn", seed);
    let cnn = config.cnn_config(seed);
    let (model, report) = train_cnn(&train_x, &train_y, &cnn)?;
    bundle.write("saliency/model.ckpt", save_checkpoint(&model))?;
    bundle.write_json("saliency/train_report.json", &report)?;

    let probs = vision::predict_proba(&model, &test_x)?;
    let groups: Vec<Subgroup> =
        test_rows.iter().map(|&i| Subgroup::from_flags(entries[i].young, entries[i].male)).collect();
    let metrics = subgroup_metrics(&probs, &test_y, &groups)?;
    bundle.write_table("saliency/subgroups", metrics.to_csv(), &metrics)?;
    let mut csv = String::from("image_id,subgroup,label,probability\n");
    for (n, &i) in test_rows.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{},{}", entries[i].row_id, groups[n].label(), test_y[n], probs[n]);
    }
    bundle.write("saliency/predictions.csv", csv)?;

    let target = cnn.last_conv().expect("configured network has a convolution");
    let selected = topk_select(&probs, &groups, config.top_k);
    let mut topk_csv = String::from("subgroup,rank,image_id,probability\n");
    let mut summary = SaliencySummary {
        target_layer: target,
        top_k: config.top_k,
        normalization: "each map max-normalized before averaging; the mean re-normalized",
        groups: Vec::new(),
    };
    for g in Subgroup::ALL {
        let rows = selected.get(&g).map(Vec::as_slice).unwrap_or_default();
        summary.groups.push(SaliencyGroup {
            subgroup: g,
            selected: rows.len(),
            mean_probability: (!rows.is_empty()).then(|| rows.iter().map(|&r| probs[r]).sum::<f64>() / rows.len() as f64),
        });
        if rows.is_empty() {
            continue;
        }
        for (rank, &r) in rows.iter().enumerate() {
            let _ = writeln!(topk_csv, "{},{},{},{}", g.label(), rank + 1, entries[test_rows[r]].row_id, probs[r]);
        }
        let maps = rows
            .par_iter()
            .map(|&r| grad_cam(&model, &test_x[r], target))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mean_map = average_maps(&maps)?;
        let faces: Vec<ImageTensor> = rows.iter().map(|&r| test_x[r].clone()).collect();
        let face = average_faces(&faces)?;
        let dir = format!("saliency/{}", g.label());
        let ext = if face.channels() == 1 { "pgm" } else { "ppm" };
        bundle.write(&format!("{dir}/map.pgm"), plane_to_pgm(mean_map.width, mean_map.height, &mean_map.overlay))?;
        bundle.write(&format!("{dir}/face.{ext}"), encode_image(&face)?)?;
        bundle.write(&format!("{dir}/overlay.ppm"), overlay_ppm(&face, &mean_map)?)?;
        bundle.write_json(&format!("{dir}/map.json"), &mean_map)?;
    }
    bundle.write("saliency/topk.csv", topk_csv)?;
    bundle.write_json("saliency/summary.json", &summary)?;
    Ok(())
}
