use audit_core::cluster::{assign_clusters, ClusterModel};
use audit_core::inference::{
    build_design, fit_logit, group_proportions, refit_excluding, vif, DesignMatrix, DesignReference, Sex,
    LL_RELATIVE_SLACK,
};
use audit_core::ingest::{synth_generate, Generator, SynthSpec};
use proptest::prelude::*;

fn synthetic_design(seed: u64, n: usize, coefficients: Vec<f64>) -> DesignMatrix {
    let probs = vec![0.4; coefficients.len() - 1];
    let spec = SynthSpec { n_rows: n, generator: Generator::LogitGroundTruth { probs, coefficients }, seed };
    let (table, labels) = synth_generate(&spec).unwrap();
    let cols: Vec<Vec<f64>> =
        (0..table.n_cols()).map(|j| table.column(j).into_iter().map(f64::from).collect()).collect();
    let y = labels.unwrap().into_iter().map(f64::from).collect();
    DesignMatrix::with_intercept(table.attribute_names().to_vec(), &cols, y).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn optimum_properties(seed in any::<u64>(), coef in prop::collection::vec(-1.5f64..1.5, 2..5)) {
        let design = synthetic_design(seed, 3_000, coef);
        let fit = fit_logit(&design).unwrap();
        prop_assert!(fit.converged);

        // with an intercept, fitted probabilities sum to the positive count
        let mu_sum: f64 = (0..design.n())
            .map(|i| {
                let eta: f64 = design.row(i).iter().zip(&fit.coef).map(|(x, b)| x * b).sum();
                1.0 / (1.0 + (-eta).exp())
            })
            .sum();
        let y_sum: f64 = design.y().iter().sum();
        prop_assert!((mu_sum - y_sum).abs() < 1e-6, "{mu_sum} vs {y_sum}");

        // odds-ratio intervals are symmetric on the log scale
        for j in 0..fit.p() {
            let lo = fit.coef[j] - fit.or_ci_low[j].ln();
            let hi = fit.or_ci_high[j].ln() - fit.coef[j];
            prop_assert!((lo - hi).abs() < 1e-9);
            prop_assert!(fit.or_ci_low[j] <= fit.odds_ratio[j] && fit.odds_ratio[j] <= fit.or_ci_high[j]);
        }

        for w in fit.ll_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - LL_RELATIVE_SLACK * (1.0 + w[0].abs()));
        }
        prop_assert!(fit.log_likelihood >= fit.null_log_likelihood - 1e-9);
        prop_assert!((0.0..=1.0).contains(&fit.pseudo_r2));
    }
}

fn clustered_fixture() -> (audit_core::AttributeTable, ClusterModel) {
    let spec = SynthSpec {
        n_rows: 5_000,
        generator: Generator::IndependentBernoulli { probs: vec![0.5, 0.3, 0.6, 0.4, 0.45, 0.5] },
        seed: 4,
    };
    let (table, _) = synth_generate(&spec).unwrap();
    let names = table.attribute_names();
    let model = ClusterModel::new(vec![
        vec![names[0].clone(), names[1].clone()],
        vec![names[2].clone()],
        vec![names[3].clone(), names[4].clone()],
    ])
    .unwrap();
    (table, model)
}

#[test]
fn interaction_design_and_diagnostics() {
    let (table, model) = clustered_fixture();
    let assignments = assign_clusters(&table, &model).unwrap();
    let sex = table.column(5);
    // label depends on cluster and sex
    let label: Vec<u8> = (0..table.n_rows())
        .map(|i| {
            let r = (i * 2_654_435_761) % 1000;
            let p = match (assignments.cluster[i], sex[i]) {
                (1, 0) => 700,
                (1, _) => 300,
                (2, 0) => 500,
                (_, 0) => 450,
                _ => 200,
            };
            u8::from(r < p)
        })
        .collect();
    let design = build_design(&assignments, &sex, &label, DesignReference::default()).unwrap();
    assert_eq!(
        design.names(),
        ["Intercept", "Cluster2", "Cluster3", "Male", "Cluster2:Male", "Cluster3:Male"]
    );
    let fit = fit_logit(&design).unwrap();
    // saturated in cluster x sex: the reference cell is fitted exactly
    let props = group_proportions(&assignments, &sex, &label).unwrap();
    let cell = props.get(1, Sex::Female).unwrap();
    let p = cell.proportion.unwrap();
    assert!((fit.coef[0] - (p / (1.0 - p)).ln()).abs() < 1e-8);

    let report = vif(&design, &fit).unwrap();
    assert_eq!(report.wald_df, 5);
    assert!(report.vif.iter().all(|e| e.vif.value() >= 1.0));
    let (reduced, cmp) = refit_excluding(&design, &["Cluster3:Male"]).unwrap();
    assert_eq!(reduced.p(), 5);
    assert_eq!(cmp.rows.len(), 5);
    assert!(cmp.rows.iter().all(|r| r.predictor != "Cluster3:Male"));
}
