use std::collections::HashSet;

use wlembed_core::predictor::pool_keys;
use wlembed_core::traces::Observation;
use wlembed_core::{
    evaluate_scheme, evaluate_trained, generate, split_workloads, train_model, AdmissionScheme, GroundTruth, Hyper, LatencyPredictor, Method,
    ScalerStats, SynthSpec, TraceSet, TrainedModel,
};

fn spec() -> SynthSpec {
    SynthSpec {
        n_templates: 3,
        workloads_per_template: 4,
        p: 8,
        s: 3,
        configs_per_workload: 14,
        shared_config_count: 6,
        ..SynthSpec::default()
    }
}

fn quick(method: Method) -> Hyper {
    Hyper {
        embed_dim: 3,
        hidden: vec![16],
        reg_hidden: vec![16],
        epochs: 20,
        reg_epochs: 20,
        incremental_epochs: 50,
        batch_size: 16,
        reg_batch_size: 16,
        ..Hyper::for_method(method)
    }
}

fn rebuild(t: &TraceSet, f: impl Fn(usize, &Observation) -> Observation) -> TraceSet {
    let obs = t.observations().iter().enumerate().map(|(i, o)| f(i, o)).collect();
    TraceSet::new(obs, t.knob_names().to_vec(), t.metric_names().to_vec()).unwrap()
}

fn artifacts(m: &TrainedModel) -> Vec<(String, Vec<u8>)> {
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path()).unwrap();
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn test_rows_never_reach_scaler_or_training() {
    let (full, _) = generate(&spec()).unwrap();
    let (train, test) = split_workloads(&full, 0.25, 3).unwrap();
    let test_ids: HashSet<String> = test.workload_ids().into_iter().collect();
    let poisoned = rebuild(&full, |_, o| {
        if test_ids.contains(&o.workload_id) {
            Observation {
                metrics: o.metrics.iter().map(|m| m * 1e6 + 7.0).collect(),
                config: o.config.iter().map(|c| c * 3.0 + 1.0).collect(),
                latency: o.latency * 1e4,
                ..o.clone()
            }
        } else {
            o.clone()
        }
    });
    let (train2, test2) = split_workloads(&poisoned, 0.25, 3).unwrap();
    assert_eq!(train, train2);
    assert_ne!(test, test2);
    for m in [Method::Identity, Method::Kpca, Method::Siamese, Method::Hybrid2, Method::Embedding] {
        let a = train_model(m, &train, &quick(m)).unwrap();
        let b = train_model(m, &train2, &quick(m)).unwrap();
        assert_eq!(a.scaler, b.scaler, "{m}");
        assert_eq!(artifacts(&a), artifacts(&b), "{m}");
        let seen: HashSet<&String> = a.info.train_workloads.iter().collect();
        assert!(test_ids.iter().all(|id| !seen.contains(id)), "{m}");
        assert_eq!(a.scaler, wlembed_core::fit_scaler(&train).unwrap());
    }
}

#[test]
fn admitted_and_scored_rows_partition_each_workload() {
    let (full, _) = generate(&spec()).unwrap();
    let (train, test) = split_workloads(&full, 0.25, 1).unwrap();
    let model = train_model(Method::Pca, &train, &quick(Method::Pca)).unwrap();
    let shared = pool_keys(&model.info.shared_pool);
    let rows = test.by_workload();
    for scheme in AdmissionScheme::ALL {
        for seed in 0..3 {
            let r = evaluate_trained(&model, &test, scheme, seed).unwrap();
            assert_eq!(r.audits.len(), rows.len());
            let mut scored = 0;
            for (audit, (id, all)) in r.audits.iter().zip(&rows) {
                assert_eq!(&audit.workload_id, id);
                assert_eq!(audit.admitted.len(), scheme.n_obs);
                let a: HashSet<usize> = audit.admitted.iter().copied().collect();
                let s: HashSet<usize> = audit.scored.iter().copied().collect();
                assert!(a.is_disjoint(&s), "{scheme} {id}");
                let union: HashSet<usize> = a.union(&s).copied().collect();
                assert_eq!(union, all.iter().copied().collect::<HashSet<_>>());
                for &i in &audit.admitted {
                    let key = wlembed_core::traces::config_key(&model.scaler.scale_config(&test.observations()[i].config));
                    assert_eq!(shared.contains(&key), scheme.pool == wlembed_core::Pool::Shared);
                }
                scored += s.len();
            }
            assert_eq!(r.n_scored, scored);
        }
    }
}

#[test]
fn scores_ignore_what_the_model_must_not_see() {
    let (full, _) = generate(&spec()).unwrap();
    let (train, test) = split_workloads(&full, 0.25, 2).unwrap();
    let model = train_model(Method::Siamese, &train, &quick(Method::Siamese)).unwrap();
    for scheme in AdmissionScheme::ALL {
        let base = evaluate_trained(&model, &test, scheme, 4).unwrap();
        let admitted: HashSet<usize> = base.audits.iter().flat_map(|a| a.admitted.iter().copied()).collect();
        let changed_latency = rebuild(&test, |i, o| Observation { latency: if admitted.contains(&i) { o.latency * 9.0 } else { o.latency }, ..o.clone() });
        let changed_metrics = rebuild(&test, |i, o| {
            let metrics = if admitted.contains(&i) { o.metrics.clone() } else { o.metrics.iter().map(|m| m * 5.0 - 3.0).collect() };
            Observation { metrics, ..o.clone() }
        });
        assert_eq!(evaluate_trained(&model, &changed_latency, scheme, 4).unwrap(), base, "{scheme}");
        assert_eq!(evaluate_trained(&model, &changed_metrics, scheme, 4).unwrap(), base, "{scheme}");
        let changed_admitted = rebuild(&test, |i, o| {
            let metrics = if admitted.contains(&i) { o.metrics.iter().map(|m| m * 5.0 - 3.0).collect() } else { o.metrics.clone() };
            Observation { metrics, ..o.clone() }
        });
        assert_ne!(evaluate_trained(&model, &changed_admitted, scheme, 4).unwrap().pooled_mape, base.pooled_mape, "{scheme}");
    }
}

#[test]
fn seen_workloads_are_rejected_at_evaluation() {
    let (full, _) = generate(&spec()).unwrap();
    let (train, test) = split_workloads(&full, 0.25, 0).unwrap();
    let model = train_model(Method::Identity, &train, &quick(Method::Identity)).unwrap();
    let err = evaluate_trained(&model, &train, AdmissionScheme::ALL[0], 0).unwrap_err();
    assert!(err.to_string().contains("seen in training"), "{err}");
    let mixed: HashSet<String> = test.workload_ids().into_iter().chain(train.workload_ids().into_iter().take(1)).collect();
    assert!(evaluate_trained(&model, &full.subset(&mixed).unwrap(), AdmissionScheme::ALL[0], 0).is_err());
}

/// Predicts the generator's noiseless latency for the admitted workload.
struct Oracle<'a> {
    truth: &'a GroundTruth,
    scaler: &'a ScalerStats,
    ids: Vec<String>,
}

impl LatencyPredictor for Oracle<'_> {
    fn min_admission(&self) -> usize {
        1
    }

    fn admit(&self, workload_id: &str, _obs: &[&Observation]) -> wlembed_core::Result<Vec<f64>> {
        Ok(vec![self.ids.iter().position(|w| w == workload_id).unwrap() as f64])
    }

    fn predict(&self, z: &[f64], configs: &[Vec<f64>]) -> wlembed_core::Result<Vec<f64>> {
        let id = &self.ids[z[0] as usize];
        configs.iter().map(|c| self.truth.true_latency(id, &self.scaler.unscale_config(c))).collect()
    }
}

#[test]
fn oracle_predictor_scores_zero_on_noiseless_data() {
    let (full, truth) = generate(&SynthSpec { noise_std: 0.0, ..spec() }).unwrap();
    let (train, test) = split_workloads(&full, 0.25, 0).unwrap();
    let model = train_model(Method::Identity, &train, &quick(Method::Identity)).unwrap();
    let scaled = model.scale(&test).unwrap();
    let oracle = Oracle { truth: &truth, scaler: &model.scaler, ids: scaled.workload_ids() };
    for scheme in AdmissionScheme::ALL {
        let r = evaluate_scheme(&oracle, &scaled, &pool_keys(&model.info.shared_pool), scheme, 0).unwrap();
        assert!(r.pooled_mape < 1e-6, "{scheme}: {}", r.pooled_mape);
        assert!(r.macro_mape < 1e-6, "{scheme}: {}", r.macro_mape);
    }
}
