use spatea_core::harness::{evaluate, train, EvalSplit, RunConfig, SplitMode};
use spatea_core::model::{load_checkpoint, save_checkpoint, Checkpoint, ModelConfig, Params};
use spatea_core::nbody::{generate, split_indices, write_dataset, GenConfig};
use spatea_core::Error;

fn tiny() -> ModelConfig {
    ModelConfig { d: 3, chi: 2, sigma: 2, chi_t: 2, layers: 2, hidden: 8, msg_width: 4, ..Default::default() }
}

#[test]
fn identity_model_scores_the_stay_put_prediction() {
    let tmp = tempfile::tempdir().unwrap();
    let samples = generate(&GenConfig { n_traj: 14, steps: 300, ..Default::default() }).unwrap();
    let data = tmp.path().join("d.jsonl");
    write_dataset(&samples, &data).unwrap();
    let cfg = tiny();
    let ck = tmp.path().join("zero.ckpt");
    save_checkpoint(&ck, &Checkpoint { params: Params::zeros(&cfg), config: cfg, extra: None }).unwrap();

    let test = split_indices(samples.len(), samples[0].meta.seed).test;
    let (mut sse, mut k) = (0.0, 0);
    for &i in &test {
        for (x, y) in samples[i].positions.iter().zip(&samples[i].target_positions) {
            sse += (0..3).map(|c| (x[c] - y[c]).powi(2)).sum::<f64>();
            k += 3;
        }
    }
    let rep = evaluate(&ck, &data, EvalSplit::Test, Some(tmp.path())).unwrap();
    assert_eq!(rep.n_samples, test.len());
    assert!((rep.test_mse - sse / k as f64).abs() <= 1e-12 * (sse / k as f64), "{} vs {}", rep.test_mse, sse / k as f64);
    let again = evaluate(&ck, &data, EvalSplit::Test, None).unwrap();
    assert_eq!(again, rep);
}

#[test]
fn non_finite_loss_aborts_and_keeps_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let mut samples = generate(&GenConfig { n_traj: 4, steps: 100, ..Default::default() }).unwrap();
    samples[2].target_positions[0] = [1e200, 0.0, 0.0];
    let data = tmp.path().join("bad.jsonl");
    write_dataset(&samples, &data).unwrap();
    let cfg = RunConfig {
        model: tiny(),
        epochs: 3,
        batch_size: 2,
        dataset: data,
        out_dir: tmp.path().join("run"),
        split: SplitMode::All,
        ..Default::default()
    };
    match train(&cfg) {
        Err(Error::Numerical { iterations, .. }) => assert_eq!(iterations, 1),
        other => panic!("expected a numerical error, got {other:?}"),
    }
    let ck = load_checkpoint(&tmp.path().join("run/best.ckpt")).unwrap();
    assert_eq!(ck.config, cfg.model);
    let metrics = std::fs::read_to_string(tmp.path().join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1);
}

#[test]
fn tiny_holdout_split_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let samples = generate(&GenConfig { n_traj: 3, steps: 10, ..Default::default() }).unwrap();
    let data = tmp.path().join("d.jsonl");
    write_dataset(&samples, &data).unwrap();
    let cfg = RunConfig { model: tiny(), dataset: data, out_dir: tmp.path().join("r"), ..Default::default() };
    assert!(matches!(train(&cfg), Err(Error::Config(_))));
}

#[test]
fn training_lowers_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let samples = generate(&GenConfig { n_traj: 21, steps: 300, ..Default::default() }).unwrap();
    let data = tmp.path().join("d.jsonl");
    write_dataset(&samples, &data).unwrap();
    let mut cfg = RunConfig { model: tiny(), epochs: 15, batch_size: 4, dataset: data, out_dir: tmp.path().join("r"), ..Default::default() };
    cfg.optimizer.lr = 3e-3;
    let rep = train(&cfg).unwrap();
    assert_eq!(rep.rows.len(), 15);
    assert!(rep.best_val_mse < rep.rows[0].val_mse, "{:?}", rep.rows);
    assert!(rep.rows.iter().all(|r| r.train_mse >= 0.0 && r.val_mse >= 0.0));
}
