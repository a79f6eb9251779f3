use perfrl::corpus::{TaskInstance, UnitTest, DEFAULT_INSTRUCTION};
use perfrl::policy::{OptimizerKind, Optimizer, PolicyParams, PolicyShape, Tokenizer};
use perfrl::reward::{RewardConfig, Tier};
use perfrl::sampling::{assemble_training_candidates, Origin, SamplingConfig};
use perfrl::sandbox::Sandbox;
use perfrl::trainer::{tuning_loss, RunDir, TrainConfig, TrainOptions, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn identity_task(i: usize, rng: &mut ChaCha8Rng) -> TaskInstance {
    let a: u32 = rng.gen_range(0..100);
    let source = format!("print({a}+{i})\n");
    TaskInstance {
        id: format!("id-{i}"),
        slow_source: source.clone(),
        fast_source: source,
        tests: vec![UnitTest {
            input: String::new(),
            expected_output: (a as usize + i).to_string(),
        }],
        executable: true,
    }
}

fn trainer(config: TrainConfig, sandbox: &Sandbox) -> Trainer<'_> {
    Trainer::new(
        config,
        SamplingConfig {
            max_len: 32,
            ..SamplingConfig::default()
        },
        RewardConfig::default(),
        DEFAULT_INSTRUCTION,
        sandbox,
    )
    .unwrap()
}

#[test]
fn fine_tune_reduces_loss_on_identity_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let tasks: Vec<TaskInstance> = (0..200).map(|i| identity_task(i, &mut rng)).collect();
    let sandbox = Sandbox::default();
    let config = TrainConfig {
        ft_learning_rate: 0.5,
        ft_batch_size: 20,
        ..TrainConfig::default()
    };
    let t = trainer(config, &sandbox);
    let mut params = PolicyParams::init(PolicyShape::default(), 1).unwrap();
    let mut opt = Optimizer::new(config.optimizer, params.values().len());
    let losses = t.fine_tune(&mut params, &mut opt, &tasks).unwrap();
    assert_eq!(losses.len(), 10);
    assert!(losses.last().unwrap() < losses.first().unwrap(), "{losses:?}");
}

#[test]
fn fine_tune_on_nothing_changes_nothing() {
    let sandbox = Sandbox::default();
    let t = trainer(TrainConfig::default(), &sandbox);
    let initial = PolicyParams::init(PolicyShape::default(), 2).unwrap();
    let mut params = initial.clone();
    let mut opt = Optimizer::new(OptimizerKind::Sgd, params.values().len());
    let losses = t.fine_tune(&mut params, &mut opt, &[]).unwrap();
    assert!(losses.is_empty());
    assert_eq!(params, initial);
}

#[test]
fn fine_tune_memorizes_a_single_pair() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let task = identity_task(7, &mut rng);
    let sandbox = Sandbox::default();
    let config = TrainConfig {
        ft_learning_rate: 1e-2,
        optimizer: OptimizerKind::adam(),
        ..TrainConfig::default()
    };
    let t = trainer(config, &sandbox);
    let mut params = PolicyParams::init(PolicyShape::default(), 3).unwrap();
    let mut opt = Optimizer::new(config.optimizer, params.values().len());
    let mut last = f64::INFINITY;
    for _ in 0..50 {
        last = t.fine_tune(&mut params, &mut opt, std::slice::from_ref(&task)).unwrap()[0];
    }
    // one more evaluation after the final update
    let prompt = t.prompt_tokens(&task).unwrap();
    let target = Tokenizer.encode_target(task.fast_source.as_bytes());
    let lps = perfrl::policy::LanguageModel::sequence_log_probs(&params, &prompt, &target).unwrap();
    let per_token = -lps.iter().sum::<f64>() / lps.len() as f64;
    assert!(per_token < 0.1, "per-token loss {per_token} (last batch {last})");
}

#[test]
fn tuning_loss_on_target_matches_fine_tune_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let task = identity_task(3, &mut rng);
    let sandbox = Sandbox::default();
    let t = trainer(TrainConfig::default(), &sandbox);
    let params = PolicyParams::init(PolicyShape::default(), 4).unwrap();
    let prompt = t.prompt_tokens(&task).unwrap();
    let mut cands = assemble_training_candidates(&params, &task, &prompt, &t.sampling, 1).unwrap();
    for c in &mut cands {
        let tier = if c.origin == Origin::Target { Tier::R4 } else { Tier::R1 };
        c.reward = Some(RewardConfig::default().tier(tier));
    }
    let target_len = cands[3].tokens.len() as f64;
    // the returned batch loss is measured before the update
    let mut p = params.clone();
    let mut opt = Optimizer::new(OptimizerKind::Sgd, p.values().len());
    let ft = t.fine_tune(&mut p, &mut opt, std::slice::from_ref(&task)).unwrap()[0];
    let tl = tuning_loss(&cands).unwrap();
    assert!((tl - ft * target_len).abs() < 1e-9 * tl.abs(), "{tl} vs {ft} x {target_len}");
}

#[test]
fn untrained_model_still_gets_a_passing_target() {
    let sandbox = Sandbox::default();
    let t = trainer(TrainConfig::default(), &sandbox);
    let params = PolicyParams::zeros(PolicyShape::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let task = identity_task(1, &mut rng);
    let prepared = t.prepare(std::slice::from_ref(&task)).unwrap();
    let groups = t.generate_and_reward(&params, &prepared, 1).unwrap();
    let target = groups[0].iter().find(|c| c.origin == Origin::Target).unwrap();
    assert_eq!(target.program(), task.fast_source.as_bytes());
    assert!(prepared[0].baseline.target_tier >= Tier::R3);
    assert!(target.reward.unwrap().tier >= Tier::R3);
}

#[test]
fn zero_tasks_leave_params_unchanged_and_no_stats() {
    let sandbox = Sandbox::default();
    let t = trainer(TrainConfig::default(), &sandbox);
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::create(dir.path()).unwrap();
    let initial = PolicyParams::init(PolicyShape::default(), 5).unwrap();
    let out = t.train(&[], initial.clone(), &run, &TrainOptions::default()).unwrap();
    assert_eq!(out.params, initial);
    assert!(out.history.is_empty());
    assert!(run.read_stats().unwrap().is_empty());
}

#[test]
fn zero_rl_steps_returns_the_fine_tuned_model() {
    let sandbox = Sandbox::default();
    let config = TrainConfig {
        rl_steps: 0,
        ft_learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let t = trainer(config, &sandbox);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let tasks: Vec<TaskInstance> = (0..3).map(|i| identity_task(i, &mut rng)).collect();
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::create(dir.path()).unwrap();
    let initial = PolicyParams::init(PolicyShape::default(), 6).unwrap();
    let out = t.train(&tasks, initial.clone(), &run, &TrainOptions::default()).unwrap();
    assert!(out.history.is_empty());

    let mut expected = initial;
    let mut opt = Optimizer::new(config.optimizer, expected.values().len());
    t.fine_tune(&mut expected, &mut opt, &tasks).unwrap();
    assert_eq!(out.params, expected);
    assert_eq!(run.load_finetune().unwrap(), expected);
}

#[test]
fn full_run_records_one_stats_line_per_step() {
    let sandbox = Sandbox::default();
    let config = TrainConfig {
        rl_steps: 3,
        epochs_per_step: 1,
        ..TrainConfig::default()
    };
    let t = trainer(config, &sandbox);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let tasks: Vec<TaskInstance> = (0..2).map(|i| identity_task(i, &mut rng)).collect();
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::create(dir.path()).unwrap();
    let initial = PolicyParams::init(PolicyShape::default(), 7).unwrap();
    let out = t.train(&tasks, initial, &run, &TrainOptions::default()).unwrap();
    let steps: Vec<usize> = out.history.iter().map(|s| s.step).collect();
    assert_eq!(steps, vec![1, 2, 3]);
    assert_eq!(run.read_stats().unwrap().len(), 3);
    for s in &out.history {
        assert_eq!(s.n_candidates, 8);
        assert!(s.optimization_rate <= s.pass_rate && s.pass_rate <= s.compilation_rate);
    }
}
