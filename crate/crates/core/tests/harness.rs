use sparsetrain::harness::checkpoint::Checkpoint;
use sparsetrain::harness::earlystop::run_earlystop_sweep;
use sparsetrain::harness::metrics::{read_metrics, FIXED_COLUMNS};
use sparsetrain::harness::report::report;
use sparsetrain::harness::ticket::{ticket_trainer, run_ticket, run_ticket_from_dir, InitSource, TicketSpec};
use sparsetrain::harness::{compress_iterative, evaluate, load_data, presets, train, Method, RunConfig, Trainer};
use sparsetrain::param::Param;
use sparsetrain::schedule::EpochSchedule;
use sparsetrain::sparse::initial_active_count;
use sparsetrain::Error;

fn synthetic(method: Method, epochs: usize) -> (RunConfig, sparsetrain::harness::Datasets) {
    let cfg = presets::synthetic(method, epochs);
    let data = load_data(&cfg.data, cfg.seed, None).unwrap();
    (cfg, data)
}

fn masks(params: &[Param]) -> Vec<Vec<usize>> {
    params
        .iter()
        .filter_map(Param::as_sparse)
        .map(|t| t.active_indices().to_vec())
        .collect()
}

#[test]
fn static_run_with_zero_lr_leaves_parameters_unchanged() {
    let (mut cfg, data) = synthetic(Method::StaticSparse, 2);
    cfg.lr_schedule = EpochSchedule::constant(2, 0.0);
    let before = Trainer::new(cfg.clone()).unwrap().params;
    let t = train(cfg, &data, None).unwrap();
    assert_eq!(t.epoch, 4);
    assert_eq!(t.params, before);
}

#[test]
fn dynamic_run_keeps_global_sparsity_in_every_row() {
    let (mut cfg, data) = synthetic(Method::DynamicSparse, 5);
    cfg.sparsity = 0.9;
    let t = train(cfg, &data, None).unwrap();
    let n: usize = t.tracked.iter().map(|&k| t.params[k].dense_len()).sum();
    assert!(!t.log.steps.is_empty());
    for row in &t.log.epochs {
        assert!((row.global_sparsity - 0.9).abs() <= 1.0 / n as f64, "{}", row.global_sparsity);
    }
    let m: Vec<usize> = t.log.steps.iter().map(|s| s.report.tensors.iter().map(|x| x.active_after).sum()).collect();
    assert!(m.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn static_mask_never_changes() {
    let (cfg, data) = synthetic(Method::StaticSparse, 2);
    let start = masks(&Trainer::new(cfg.clone()).unwrap().params);
    let t = train(cfg, &data, None).unwrap();
    assert_eq!(masks(&t.params), start);
}

#[test]
fn set_keeps_per_tensor_counts() {
    let (cfg, data) = synthetic(Method::Set, 3);
    let start: Vec<usize> = masks(&Trainer::new(cfg.clone()).unwrap().params).iter().map(Vec::len).collect();
    let t = train(cfg, &data, None).unwrap();
    let end: Vec<usize> = masks(&t.params).iter().map(Vec::len).collect();
    assert_eq!(start, end);
}

#[test]
fn same_seed_same_run() {
    for method in [Method::DynamicSparse, Method::Deepr] {
        let (cfg, data) = synthetic(method, 2);
        let a = train(cfg.clone(), &data, None).unwrap();
        let b = train(cfg, &data, None).unwrap();
        assert_eq!(a.params, b.params, "{method}");
        assert_eq!(a.log.final_accuracy(), b.log.final_accuracy());
    }
}

#[test]
fn resume_matches_uninterrupted_run() {
    for method in [Method::DynamicSparse, Method::Deepr, Method::Set, Method::CompressedSparse] {
        let (cfg, data) = synthetic(method, 4);
        let mut full = Trainer::new(cfg.clone()).unwrap();
        full.run(&data).unwrap();

        let mut half = Trainer::new(cfg).unwrap();
        for _ in 0..full.total_epochs() / 2 + 1 {
            half.run_epoch(&data).unwrap();
        }
        let bytes = half.checkpoint().to_bytes().unwrap();
        let ck = Checkpoint::from_bytes(std::path::Path::new("mem"), &bytes).unwrap();
        assert_eq!(ck, half.checkpoint());
        let mut resumed = Trainer::resume(&ck, half.dense_init.clone()).unwrap();
        resumed.run(&data).unwrap();
        assert_eq!(resumed.params, full.params, "{method}");
        assert_eq!(resumed.realloc, full.realloc);
        let tail = &full.log.epochs[full.log.epochs.len() - resumed.log.epochs.len()..];
        for (a, b) in resumed.log.epochs.iter().zip(tail) {
            assert_eq!((a.epoch, a.train_loss, a.test_acc), (b.epoch, b.train_loss, b.test_acc));
        }
    }
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let (cfg, _) = synthetic(Method::DynamicSparse, 1);
    let t = Trainer::new(cfg).unwrap();
    let bytes = t.checkpoint().to_bytes().unwrap();
    let p = std::path::Path::new("mem");
    assert!(Checkpoint::from_bytes(p, &bytes[..bytes.len() / 2]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Checkpoint::from_bytes(p, &bad).is_err());
}

#[test]
fn run_directory_holds_metrics_checkpoint_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = synthetic(Method::DynamicSparse, 3);
    let t = train(cfg, &data, Some(dir.path())).unwrap();
    for f in ["config.toml", "init.bin", "final.ckpt", "summary.json", "metrics.csv", "realloc.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(&header[..FIXED_COLUMNS.len()], FIXED_COLUMNS.as_slice());
    assert_eq!(header.len(), FIXED_COLUMNS.len() + t.tracked.len());
    let (names, rows) = read_metrics(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(names, t.log.tensor_names);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows, t.log.epochs);
    let cfg_back = RunConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(cfg_back, t.cfg);
}

#[test]
fn ticket_reuses_the_final_mask() {
    let (cfg, data) = synthetic(Method::DynamicSparse, 3);
    let source = train(cfg, &data, None).unwrap();
    for init in [InitSource::OriginalSnapshot, InitSource::FreshRandom] {
        let spec = TicketSpec { init, epoch_multiplier: 2 };
        let t = run_ticket(&source, &spec, &data, None).unwrap();
        assert_eq!(masks(&t.params), masks(&source.params));
        assert_eq!(t.epoch, 6);
        assert_eq!(t.cfg.method, Method::StaticSparse);
    }
}

#[test]
fn untrained_ticket_scores_like_the_masked_initialization() {
    let (cfg, data) = synthetic(Method::DynamicSparse, 2);
    let source = train(cfg, &data, None).unwrap();
    let t = ticket_trainer(&source.cfg, &source.params, &source.dense_init, &TicketSpec::default()).unwrap();
    // original values under the final mask
    let mut expected = source.params.clone();
    for (p, init) in expected.iter_mut().zip(&source.dense_init) {
        match p {
            Param::Sparse(m) => {
                let keep = m.mask().clone();
                *m = sparsetrain::sparse::MaskedTensor::new(init.shape().to_vec(), init.data().to_vec(), keep).unwrap();
            }
            d => *d = Param::Dense(init.clone()),
        }
    }
    assert_eq!(t.params, expected);
    let acc = evaluate(&t.net, &t.params, &t.bn, &data.test).unwrap();
    let classes = data.test.classes as f64;
    assert!(acc < source.log.final_accuracy());
    assert!(acc < 2.5 / classes, "untrained accuracy {acc}");
}

#[test]
fn ticket_from_directory() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, data) = synthetic(Method::DynamicSparse, 2);
    let source = train(cfg, &data, Some(dir.path())).unwrap();
    let spec = TicketSpec {
        init: InitSource::FreshRandom,
        epoch_multiplier: 1,
    };
    let t = run_ticket_from_dir(dir.path(), &spec, &data, None).unwrap();
    assert_eq!(masks(&t.params), masks(&source.params));
    assert!(ticket_trainer(&source.cfg, &source.params, &source.dense_init, &TicketSpec { epoch_multiplier: 0, ..spec }).is_err());
}

#[test]
fn earlystop_degenerate_ends() {
    let (cfg, data) = synthetic(Method::DynamicSparse, 4);
    let rows = run_earlystop_sweep(&cfg, &[0, 4], &data, None).unwrap();
    assert_eq!(rows[0].realloc_steps, 0);
    let plain = train(cfg.clone(), &data, None).unwrap();
    assert_eq!(rows[1].final_test_acc, plain.log.final_accuracy());
    assert_eq!(rows[1].realloc_steps, plain.log.steps.len());

    // stop at 0: same masks as a fixed-mask run from the same seed
    let mut stopped = cfg.clone();
    stopped.realloc.as_mut().unwrap().stop_epoch = Some(0);
    let t = train(stopped, &data, None).unwrap();
    assert_eq!(masks(&t.params), masks(&Trainer::new(cfg.with_method(Method::StaticSparse, None)).unwrap().params));
    assert!(run_earlystop_sweep(&cfg.with_method(Method::StaticSparse, None), &[1], &data, None).is_err());
}

#[test]
fn compression_hits_each_scheduled_sparsity() {
    let (cfg, data) = synthetic(Method::CompressedSparse, 3);
    let c = cfg.compression.clone().unwrap();
    let mut t = Trainer::new(cfg).unwrap();
    assert!(compress_iterative(&mut t, &data).is_err());
    while t.epoch < t.cfg.epochs {
        t.run_epoch(&data).unwrap();
    }
    let events = compress_iterative(&mut t, &data).unwrap();
    assert_eq!(events.len(), c.events);
    for (i, e) in events.iter().enumerate() {
        assert_eq!(e.event, i + 1);
        assert_eq!(e.active, initial_active_count(e.dense, c.sparsity_at(e.event, t.cfg.sparsity)));
    }
    let (s, _) = t.tracked_sparsity();
    let n = events[0].dense as f64;
    assert!((s - t.cfg.sparsity).abs() <= 1.0 / n);
}

#[test]
fn thin_and_hashed_runs_complete() {
    for method in [Method::ThinDense, Method::Hashed] {
        let (cfg, data) = synthetic(method, 2);
        let t = train(cfg, &data, None).unwrap();
        assert!(t.log.final_accuracy() > 0.5, "{method}");
    }
}

#[test]
fn report_needs_runs_and_counts_dense_tensors() {
    let out = tempfile::tempdir().unwrap();
    assert!(matches!(report(&[], out.path()), Err(Error::InvalidArgument(_))));

    let run = out.path().join("dyn");
    let (cfg, data) = synthetic(Method::DynamicSparse, 2);
    let t = train(cfg, &data, Some(&run)).unwrap();
    let r = report(&[run], &out.path().join("report")).unwrap();
    assert_eq!(r.series.len(), 1);
    let s = &r.runs[0].1;
    let dense_other: usize = t
        .params
        .iter()
        .enumerate()
        .filter(|(k, _)| !t.tracked.contains(k))
        .map(|(_, p)| p.dense_len())
        .sum();
    assert_eq!(s.param_count, s.sparse_active_count + dense_other);
    for f in &r.files {
        assert!(f.is_file());
    }
}

#[test]
fn divergence_aborts_with_a_diagnostic() {
    let (mut cfg, data) = synthetic(Method::StaticSparse, 1);
    cfg.lr_schedule = EpochSchedule::constant(1, 1e200);
    match train(cfg, &data, None) {
        Err(Error::Diverged { epoch, .. }) => assert_eq!(epoch, 1),
        Err(Error::NonFinite(_)) => {}
        other => panic!("expected divergence, got {:?}", other.map(|t| t.epoch)),
    }
}

#[test]
fn missing_mnist_directory_is_reported() {
    let cfg = presets::mnist(Method::DynamicSparse);
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_data(&cfg.data, 1, Some(dir.path())), Err(Error::Dataset(_))));
}
