use std::fs;

use swarmgraph::harness::metrics::{read_rows, EvalRow, MetricsRow};
use swarmgraph::harness::{
    cmd_curriculum, cmd_train, evaluate, Checkpoint, EvalSetup, NetworkController, RunConfig, RunOptions,
};
use swarmgraph::policy::Policy;
use swarmgraph::rng;

fn small() -> RunConfig {
    let mut c = RunConfig::default();
    c.policy.hidden = 16;
    c.policy.attn_dim = 16;
    c.ppo.n_envs = 2;
    c.ppo.rollout_len = 16;
    c.ppo.epochs = 1;
    c.train.eval_every = 2;
    c.train.eval_episodes = 3;
    c.train.checkpoint_every = 2;
    c
}

#[test]
fn untrained_policy_rarely_covers() {
    let cfg = RunConfig::default();
    let policy: Policy = Policy::new(cfg.policy.clone(), &mut rng::stream(0, "init", 0)).unwrap();
    let world = cfg.world_for(3);
    let mut c = NetworkController {
        policy: &policy,
        greedy: true,
        rng: rng::stream(0, "a", 0),
    };
    let s = evaluate(
        &mut c,
        &EvalSetup {
            world: &world,
            task: &cfg.task,
            comm: &cfg.comm,
            episodes: 30,
            round: 0,
            record: 0,
        },
    )
    .unwrap();
    assert!(s.success_rate <= 10.0, "{}", s.success_rate);
    assert!(s.episodes.iter().filter(|e| !e.success).all(|e| e.steps == 50));
}

#[test]
fn evaluation_leaves_parameters_alone() {
    let cfg = small();
    let policy: Policy = Policy::new(cfg.policy.clone(), &mut rng::stream(0, "init", 0)).unwrap();
    let before = policy.params.digest();
    let world = cfg.world_for(4);
    let mut c = NetworkController {
        policy: &policy,
        greedy: false,
        rng: rng::stream(0, "a", 0),
    };
    let setup = EvalSetup {
        world: &world,
        task: &cfg.task,
        comm: &cfg.comm,
        episodes: 3,
        round: 0,
        record: 0,
    };
    evaluate(&mut c, &setup).unwrap();
    assert_eq!(policy.params.digest(), before);
}

#[test]
fn single_stage_curriculum_matches_training() {
    let mut cfg = small();
    cfg.curriculum.stages = vec![3];
    cfg.curriculum.max_updates_per_stage = 4;
    cfg.train.iterations = 4;
    cfg.train.stop_at_threshold = true;
    cfg.train.success_threshold = 0.0;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let opts = RunOptions { deterministic: true };
    cmd_train(&cfg, a.path(), opts).unwrap();
    cmd_curriculum(&cfg, b.path(), opts).unwrap();
    for f in ["metrics.csv", "eval.csv", "final.ckpt"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    // Threshold 0 is met at the first evaluation.
    let evals: Vec<EvalRow> = read_rows(&a.path().join("eval.csv")).unwrap();
    assert_eq!(evals.len(), 1);
    assert_eq!(evals[0].iteration, 2);
}

#[test]
fn periodic_checkpoints_resume_counters() {
    let mut cfg = small();
    cfg.train.iterations = 4;
    let dir = tempfile::tempdir().unwrap();
    cmd_train(&cfg, dir.path(), RunOptions::default()).unwrap();
    let mut iters: Vec<u64> = fs::read_dir(dir.path().join("checkpoints"))
        .unwrap()
        .map(|e| Checkpoint::load(&e.unwrap().path()).unwrap().iteration)
        .collect();
    iters.sort_unstable();
    assert_eq!(iters, vec![0, 2, 4]);
    let rows: Vec<MetricsRow> = read_rows(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    let saved = RunConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(saved, cfg);
}

#[test]
fn unwritable_output_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    fs::write(&file, b"x").unwrap();
    let mut cfg = small();
    cfg.train.iterations = 0;
    assert!(cmd_train(&cfg, &file, RunOptions::default()).is_err());
}
