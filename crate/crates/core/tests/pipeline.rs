use std::path::PathBuf;

use avdn_core::agents::{
    initial_checkpoint, lstm_policy, train, transformer_policy, AgentState, LossWeights, ModelConfig, NetworkPolicy,
    OraclePolicy, TrainConfig, Vocabulary,
};
use avdn_core::dataset::{generate_episodes, load_episodes, save_episodes, GeneratorConfig};
use avdn_core::fusion::{fuse_outputs, fused_policy, Ensemble};
use avdn_core::metrics::{evaluate_split, MetricConfig};
use avdn_core::nn::{AgentKind, Checkpoint};
use avdn_core::simulator::{
    overfit_report, prediction_map, run_split, write_predictions, Autopilot, RolloutConfig, SessionConfig,
    SessionPhase, SessionRegistry, SessionSource, StopReason,
};

fn small() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        ff_hidden: 16,
        lstm_hidden: 8,
        resolution: 8,
        ..ModelConfig::default()
    }
}

fn trained(kind: AgentKind, seed: u64) -> Checkpoint {
    let eps = generate_episodes(5, 6, &GeneratorConfig::default()).unwrap();
    let cfg = TrainConfig {
        lr: 1e-3,
        total_iterations: 30,
        seed,
        ..TrainConfig::default()
    };
    train(kind, &eps, &[], &small(), &cfg).unwrap().checkpoints.pop().unwrap()
}

fn prediction_bytes(policy: &dyn avdn_core::agents::Policy, eps: &[avdn_core::dataset::Episode]) -> Vec<u8> {
    let preds = run_split(policy, eps, &RolloutConfig::default()).unwrap();
    let mut buf = Vec::new();
    write_predictions(&mut buf, &preds).unwrap();
    buf
}

#[test]
fn training_is_bit_reproducible() {
    for kind in [AgentKind::Transformer, AgentKind::Lstm] {
        let a = trained(kind, 3).to_bytes();
        let b = trained(kind, 3).to_bytes();
        assert_eq!(a, b);
        assert_ne!(a, trained(kind, 4).to_bytes());
    }
}

#[test]
fn zero_iterations_give_the_seeded_initialization() {
    let eps = generate_episodes(5, 2, &GeneratorConfig::default()).unwrap();
    let cfg = TrainConfig { seed: 11, ..TrainConfig::default() };
    let out = train(AgentKind::Lstm, &eps, &eps, &small(), &cfg).unwrap();
    assert_eq!(out.checkpoints.len(), 1);
    assert_eq!(out.checkpoints[0].iteration, 0);
    assert_eq!(
        out.checkpoints[0].to_bytes(),
        initial_checkpoint(AgentKind::Lstm, &small(), 11).unwrap().to_bytes()
    );
    assert_eq!(out.log.len(), 1);
}

#[test]
fn ensemble_of_copies_matches_single_model() {
    let eps = generate_episodes(40, 6, &GeneratorConfig::default()).unwrap();
    for kind in [AgentKind::Transformer, AgentKind::Lstm] {
        let ck = trained(kind, 1);
        let single = NetworkPolicy::from_checkpoint(ck.clone()).unwrap();
        let ens = Ensemble::new(vec![single.clone(), single.clone()]).unwrap();
        assert_eq!(prediction_bytes(&single, &eps), prediction_bytes(&ens, &eps));
    }
}

#[test]
fn mixed_ensemble_composes_member_policies() {
    let eps = generate_episodes(41, 3, &GeneratorConfig::default()).unwrap();
    let t = trained(AgentKind::Transformer, 1);
    let l = trained(AgentKind::Lstm, 2);
    let ens = Ensemble::new(vec![
        NetworkPolicy::from_checkpoint(t.clone()).unwrap(),
        NetworkPolicy::from_checkpoint(l.clone()).unwrap(),
    ])
    .unwrap();
    let swapped = Ensemble::new(ens.members().iter().rev().cloned().collect()).unwrap();
    for ep in &eps {
        let views = ep.gt_trajectory.views();
        let s = AgentState::from_views(ep, &ep.dialog, &views[..1], &Vocabulary::default(), 8).unwrap();
        let manual = fuse_outputs(&[transformer_policy(&s, &t).unwrap(), lstm_policy(&s, &l).unwrap()]).unwrap();
        let fused = fused_policy(&ens, &s).unwrap();
        assert_eq!(fused, manual);
        let other = fused_policy(&swapped, &s).unwrap();
        assert_eq!(other.next_center, fused.next_center);
        assert_eq!(other.stop_prob, fused.stop_prob);
    }
}

#[test]
fn manifest_loads_members_relative_to_itself() {
    let dir = tempfile::tempdir().unwrap();
    trained(AgentKind::Transformer, 1).save(dir.path().join("t.ckpt")).unwrap();
    trained(AgentKind::Lstm, 1).save(dir.path().join("l.ckpt")).unwrap();
    let manifest = dir.path().join("ensemble.txt");
    std::fs::write(&manifest, "# members\ntransformer t.ckpt\n\nlstm l.ckpt\n").unwrap();
    let ens = Ensemble::load_manifest(&manifest).unwrap();
    assert_eq!(ens.members().len(), 2);
    assert_eq!(ens.members()[1].kind(), AgentKind::Lstm);

    std::fs::write(&manifest, "lstm t.ckpt\nlstm l.ckpt\n").unwrap();
    assert!(Ensemble::load_manifest(&manifest).is_err());
    std::fs::write(&manifest, "transformer t.ckpt\n").unwrap();
    assert!(Ensemble::load_manifest(&manifest).is_err());
}

#[test]
fn oracle_scores_perfectly_on_generated_episodes() {
    let eps = generate_episodes(77, 30, &GeneratorConfig::default()).unwrap();
    let cfg = MetricConfig::default();
    let mut preds = Vec::new();
    for ep in &eps {
        let oracle = OraclePolicy::new(ep.goal, 50.0);
        let one = std::slice::from_ref(ep);
        preds.extend(run_split(&oracle, one, &RolloutConfig::default()).unwrap());
        // with one spare decision the oracle always gets to stop on its own
        let roomy = RolloutConfig { max_steps: Some(ep.max_steps + 1), ..RolloutConfig::default() };
        assert_eq!(run_split(&oracle, one, &roomy).unwrap()[0].stop_reason, StopReason::Stopped, "{}", ep.id);
    }
    let report = evaluate_split(&eps, &prediction_map(&preds).unwrap(), &cfg).unwrap();
    assert_eq!(report.sr, 100.0);
    assert!(report.spl >= 95.0, "SPL {}", report.spl);
}

#[test]
fn overfit_report_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let path: PathBuf = dir.path().join("t.ckpt");
    trained(AgentKind::Transformer, 2).save(&path).unwrap();
    let eps = generate_episodes(8, 3, &GeneratorConfig::default()).unwrap();
    let run = || {
        overfit_report(
            std::slice::from_ref(&path),
            Some(&eps),
            &eps,
            &RolloutConfig::default(),
            &MetricConfig::default(),
            &LossWeights::default(),
        )
        .unwrap()
    };
    let a = run();
    assert_eq!(a.rows.len(), 1);
    assert_eq!(a.rows[0].label, "HAA-Transformer(30iteration)");
    assert_eq!(a.table(), run().table());
    assert_eq!(a.rows[0].gap(), Some(0.0));
    assert!(a.table().starts_with("Method"));

    let missing = dir.path().join("nope.ckpt");
    let err = overfit_report(&[missing], None, &eps, &RolloutConfig::default(), &MetricConfig::default(), &LossWeights::default())
        .unwrap_err();
    assert!(err.to_string().contains("nope.ckpt"), "{err}");
}

#[test]
fn finished_session_round_trips_as_an_episode() {
    let reg = SessionRegistry::new(SessionConfig::default(), Autopilot::Oracle);
    let snap = reg.open_session(&SessionSource::Seed(19)).unwrap();
    let id = snap.session_id.clone();
    let mut rounds = 0;
    loop {
        rounds += 1;
        let events = reg.submit_instruction(&id, "head north then turn left").unwrap().unwrap();
        assert!(!events.is_empty());
        let phase = reg.get(&id).unwrap().lock().unwrap().phase;
        if phase == SessionPhase::Finished {
            break;
        }
        assert_eq!(phase, SessionPhase::AwaitingInstruction);
        assert!(rounds < 20, "session never finished");
    }
    let ep = reg.get(&id).unwrap().lock().unwrap().to_episode().unwrap();
    assert_eq!(ep.dialog.len(), rounds);

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("session.jsonl");
    save_episodes(std::slice::from_ref(&ep), &file).unwrap();
    let back = load_episodes(&file).unwrap();
    assert_eq!(back, vec![ep.clone()]);

    let preds = std::collections::BTreeMap::from([(ep.id.clone(), ep.gt_trajectory.clone())]);
    let report = evaluate_split(&back, &preds, &MetricConfig::default()).unwrap();
    assert_eq!(report.sr, 100.0);
}
