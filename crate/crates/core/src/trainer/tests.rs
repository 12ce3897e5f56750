use super::*;
use crate::corpus::make_folds;
use crate::encoder::{EncoderConfig, FreezePolicy};
use crate::multiscale::MultiScaleConfig;
use crate::synthetic::{planted_corpus, two_prompt_corpus, SyntheticConfig};

fn corpus_cfg(essays: usize) -> SyntheticConfig {
    SyntheticConfig {
        essays,
        blocks: 2,
        block_len: 10,
        words: 40,
        markers: 3,
        ..SyntheticConfig::default()
    }
}

fn model(vocab: &Vocabulary, dropout: f32, freeze: FreezePolicy) -> MultiScaleModel {
    let enc = EncoderConfig {
        vocab_size: vocab.len(),
        hidden: 16,
        layers: 2,
        heads: 2,
        max_positions: 512,
        ff_multiplier: 2,
        dropout,
        init_std: 0.1,
    };
    let ms = MultiScaleConfig {
        scales: vec![10],
        use_doc: true,
        use_tok: true,
        doc_len: 12,
    };
    MultiScaleModel::new(enc, ms, freeze, 5).unwrap()
}

struct Fixture {
    vocab: Vocabulary,
    spec: PromptSpec,
    essays: Vec<Essay>,
}

fn fixture(essays: usize) -> Fixture {
    let cfg = corpus_cfg(essays);
    let essays = planted_corpus(&cfg).unwrap();
    let vocab = Vocabulary::build(essays.iter().map(|e| e.text.as_str()), 200).unwrap();
    Fixture {
        vocab,
        spec: cfg.prompt().unwrap(),
        essays,
    }
}

fn train_cfg() -> TrainingConfig {
    TrainingConfig {
        learning_rate: 1e-3,
        batch_size: 4,
        epochs: 2,
        dropout: 0.1,
        pretrain_epochs: 1,
        ..TrainingConfig::default()
    }
}

fn at(epoch: usize) -> EpochCoords {
    EpochCoords {
        phase: Phase::Finetune,
        fold: 0,
        epoch,
    }
}

#[test]
fn batches_partition_and_merge_singletons() {
    let b = make_batches(9, 4, 1, at(1)).unwrap();
    assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
    let mut all: Vec<usize> = b.concat();
    all.sort_unstable();
    assert_eq!(all, (0..9).collect::<Vec<_>>());
    assert_eq!(b, make_batches(9, 4, 1, at(1)).unwrap());
    assert_ne!(b, make_batches(9, 4, 1, at(2)).unwrap());
    assert_eq!(make_batches(1, 4, 1, at(1)).unwrap(), vec![vec![0]]);
    assert!(make_batches(0, 4, 1, at(1)).is_err());
}

#[test]
fn best_epoch_is_the_first_argmax() {
    assert_eq!(select_best_epoch(&[0.2, 0.9, 0.5]), Some(2));
    assert_eq!(select_best_epoch(&[0.5, 0.5]), Some(1));
    assert_eq!(select_best_epoch(&[f64::NAN, 0.1]), Some(2));
    assert_eq!(select_best_epoch(&[]), None);
}

#[test]
fn config_validation() {
    TrainingConfig::default().validate().unwrap();
    let bad = [
        TrainingConfig {
            learning_rate: 0.0,
            ..TrainingConfig::default()
        },
        TrainingConfig {
            batch_size: 1,
            loss: LossWeights {
                gamma: 1.0,
                ..LossWeights::default()
            },
            ..TrainingConfig::default()
        },
        TrainingConfig {
            adam_beta2: 1.0,
            ..TrainingConfig::default()
        },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
}

#[test]
fn rdrop_collapses_without_dropout() {
    let f = fixture(6);
    let m = model(&f.vocab, 0.0, FreezePolicy::None);
    let data = prepare_examples(&m, &f.essays, &f.spec, &f.vocab).unwrap();
    let batch: Vec<usize> = (0..6).collect();
    let w = LossWeights {
        beta: 0.5,
        gamma: 0.1,
        ..LossWeights::default()
    };
    let one = batch_step(&m, &data, &batch, &w, 1, 3, at(1), 0).unwrap();
    let two = batch_step(&m, &data, &batch, &w, 2, 3, at(1), 0).unwrap();
    assert_eq!(two.passes[0], two.passes[1]);
    assert_eq!(losses::rdrop_consistency(&two.passes[0], &two.passes[1]).unwrap(), 0.0);
    assert!((one.loss - two.loss).abs() < 1e-7);
    for (a, b) in one.grads.iter().flatten().zip(two.grads.iter().flatten()) {
        assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()), "{a} vs {b}");
    }
}

#[test]
fn dropout_passes_differ() {
    let f = fixture(4);
    let m = model(&f.vocab, 0.3, FreezePolicy::None);
    let data = prepare_examples(&m, &f.essays, &f.spec, &f.vocab).unwrap();
    let r = batch_step(&m, &data, &[0, 1, 2, 3], &LossWeights::default(), 2, 3, at(1), 0).unwrap();
    assert_ne!(r.passes[0], r.passes[1]);
}

#[test]
fn epochs_are_reproducible_and_respect_freezing() {
    let f = fixture(8);
    let run = || {
        let mut m = model(&f.vocab, 0.1, FreezePolicy::AllButLast);
        let data = prepare_examples(&m, &f.essays, &f.spec, &f.vocab).unwrap();
        let mut opt = AdamState::new(m.params());
        let cfg = train_cfg();
        let losses: Vec<f64> = (1..=2)
            .map(|e| train_epoch(&mut m, &mut opt, &data, &cfg, &cfg.loss, true, at(e)).unwrap())
            .collect();
        (m, losses, opt.steps())
    };
    let (a, la, steps) = run();
    let (b, lb, _) = run();
    assert_eq!(la, lb);
    assert_eq!(a.params(), b.params());
    assert_eq!(steps, 4);
    let init = model(&f.vocab, 0.1, FreezePolicy::AllButLast);
    for (id, name, t) in a.params().iter() {
        let before = init.params().get(id);
        if t.requires_grad {
            assert_ne!(t.data(), before.data(), "{name} did not train");
        } else {
            assert_eq!(t.data(), before.data(), "{name} is frozen but changed");
        }
    }
}

#[test]
fn non_finite_loss_aborts() {
    let f = fixture(4);
    let mut m = model(&f.vocab, 0.0, FreezePolicy::None);
    let id = m.params().find("head.seg.b").unwrap();
    m.params_mut().get_mut(id).data_mut()[0] = f32::NAN;
    let data = prepare_examples(&m, &f.essays, &f.spec, &f.vocab).unwrap();
    let mut opt = AdamState::new(m.params());
    let cfg = train_cfg();
    let err = train_epoch(&mut m, &mut opt, &data, &cfg, &cfg.loss, true, at(1)).unwrap_err();
    assert!(matches!(err, Error::TrainingAborted(_)), "{err}");
}

fn folds_of(f: &Fixture, m: &MultiScaleModel) -> Vec<FoldData> {
    let data = prepare_examples(m, &f.essays, &f.spec, &f.vocab).unwrap();
    make_folds(&f.essays, 0)
        .unwrap()
        .iter()
        .map(|s| FoldData::from_split(&data, s).unwrap())
        .collect()
}

#[test]
fn fit_selects_the_best_dev_epoch_and_scores_test_once() {
    let f = fixture(15);
    let init = || Ok(model(&f.vocab, 0.1, FreezePolicy::None));
    let folds = folds_of(&f, &init().unwrap());
    let cfg = TrainingConfig {
        epochs: 3,
        ..train_cfg()
    };
    let s = fit(init, &folds[..2], &f.spec, &cfg).unwrap();
    assert_eq!(s.folds.len(), 2);
    for o in &s.folds {
        assert_eq!(o.history.len(), 3);
        let scores: Vec<f64> = o.history.iter().map(|h| h.dev.selection_score()).collect();
        assert_eq!(Some(o.best_epoch), select_best_epoch(&scores));
        assert_eq!(evaluate_split(&o.model, &folds[o.fold_index].dev, &f.spec).unwrap(), o.dev);
        assert_eq!(evaluate_split(&o.model, &folds[o.fold_index].test, &f.spec).unwrap(), o.test);
        assert_eq!(o.test_scores.len(), folds[o.fold_index].test.len());
        let r = o.report(1, "abc");
        assert_eq!(r.epoch_best, o.best_epoch);
        assert!(r.per_scale_scores_sample.len() <= REPORT_SAMPLE);
    }
    let mean = s.folds.iter().map(|o| o.test.qwk.unwrap()).sum::<f64>() / 2.0;
    assert!((s.mean_test_qwk.unwrap() - mean).abs() < 1e-12);
    let again = fit(init, &folds[..2], &f.spec, &cfg).unwrap();
    assert_eq!(again.folds[1].model.params(), s.folds[1].model.params());
}

#[test]
fn transfer_without_pretraining_is_plain_fit() {
    let target = corpus_cfg(10);
    let (essays, prompts) = two_prompt_corpus(&target, 8).unwrap();
    let vocab = Vocabulary::build(essays.iter().map(|e| e.text.as_str()), 200).unwrap();
    let spec = prompts.get(1).unwrap().clone();
    let init = || Ok(model(&vocab, 0.1, FreezePolicy::None));
    let m = init().unwrap();
    let in_domain: Vec<Essay> = essays.iter().filter(|e| e.prompt_id == 1).cloned().collect();
    let data = prepare_examples(&m, &in_domain, &spec, &vocab).unwrap();
    let folds: Vec<FoldData> = make_folds(&in_domain, 0).unwrap()[..1]
        .iter()
        .map(|s| FoldData::from_split(&data, s).unwrap())
        .collect();
    let raw_pool = crate::corpus::out_of_domain_pool(&essays, &prompts, 1).unwrap();
    let pool = prepare_pool(&m, &raw_pool, spec.budget().unwrap(), &vocab).unwrap();
    assert!(pool.iter().all(|e| e.prompt_id == 2 && e.label <= 1.0));

    let cfg = TrainingConfig {
        pretrain_epochs: 0,
        ..train_cfg()
    };
    let t = transfer_pipeline(init, &pool, &folds, &spec, &cfg).unwrap();
    let plain = fit(init, &folds, &spec, &cfg).unwrap();
    assert_eq!(t.summary.folds[0].model.params(), plain.folds[0].model.params());

    let cfg = train_cfg();
    let t = transfer_pipeline(init, &pool, &folds, &spec, &cfg).unwrap();
    assert_eq!(t.pretrain_losses.len(), 1);
    assert_ne!(t.pretrained.params(), init().unwrap().params());
    assert!(matches!(
        transfer_pipeline(init, &[], &folds, &spec, &cfg),
        Err(Error::EmptyPool(1))
    ));
    assert!(transfer_pipeline(init, &data, &folds, &spec, &cfg).is_err());
}

#[test]
fn pretraining_uses_mse_only() {
    let cfg = TrainingConfig {
        loss: LossWeights {
            alpha: 0.5,
            beta: 1.0,
            gamma: 0.5,
            margin: 0.2,
            rdrop_coeff: 9.0,
        },
        ..TrainingConfig::default()
    };
    let w = pretrain_weights(&cfg);
    assert_eq!((w.alpha, w.beta, w.gamma, w.rdrop_coeff), (1.0, 0.0, 0.0, 0.0));
    let w = pretrain_weights(&TrainingConfig {
        rdrop_in_pretrain: true,
        ..cfg
    });
    assert_eq!((w.beta, w.gamma, w.rdrop_coeff), (0.0, 0.0, 9.0));
}

#[test]
fn loss_grid_and_selection() {
    let grid = loss_weight_grid(&LossWeights::default());
    assert_eq!(grid.len(), 16);
    assert!(grid.iter().all(|w| w.alpha == 1.0 && w.rdrop_coeff == 9.0));
    let (best, trace) = select_loss_weights(&grid, |w| Ok(if w.beta == 0.5 { 1.0 } else { 0.0 })).unwrap();
    assert_eq!((best.beta, best.gamma), (0.5, 0.0));
    assert_eq!(trace.len(), 16);
}

#[test]
fn checkpoint_restores_predictions() {
    let f = fixture(4);
    let m = model(&f.vocab, 0.1, FreezePolicy::AllButLast);
    let data = prepare_examples(&m, &f.essays, &f.spec, &f.vocab).unwrap();
    let c = Checkpoint::new(
        m.params().clone(),
        &serde_json::json!({"k": 1}),
        serde_json::Value::Null,
        0,
        f.vocab.tokens().to_vec(),
    )
    .unwrap();
    let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
    let mut fresh = model(&f.vocab, 0.1, FreezePolicy::AllButLast);
    fresh.perturb_head(&mut ChaCha8Rng::seed_from_u64(9), 0.5);
    fresh.params_mut().load_values(&back.params).unwrap();
    assert_eq!(predict_all(&fresh, &data).unwrap(), predict_all(&m, &data).unwrap());
}
