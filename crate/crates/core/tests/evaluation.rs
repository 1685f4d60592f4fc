mod common;

use common::*;
use memssl::data::{Dataset, Modality, SampleRecord, Split};
use memssl::eval::{
    auroc_binary, auroc_macro_ovr, auroc_per_class, bootstrap_ci, cohens_d, compare, finetune, label_smooth,
    paired_t_test, quantile_sorted, radar_normalize, sens_spec_macro, stratified_subsets,
};
use memssl::raster::Image;
use memssl::train::warmup_cosine;
use memssl::vit::{init_params, ViTConfig};
use memssl::Error;

#[test]
fn auroc_examples() {
    let labels = [true, true, false, false];
    assert_eq!(auroc_binary(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap(), 1.0);
    assert_eq!(auroc_binary(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap(), 0.0);
    assert_eq!(auroc_binary(&[0.5; 4], &labels).unwrap(), 0.5);
    // one concordant, one tied, two discordant pairs... by brute force
    let s = [0.3, 0.6, 0.6, 0.9];
    assert_eq!(auroc_binary(&s, &labels).unwrap(), brute_auroc(&s, &labels));
    assert!(matches!(auroc_binary(&[0.1, 0.2], &[true, true]), Err(Error::UndefinedMetric(_))));
    assert!(matches!(auroc_binary(&[f64::NAN, 0.2], &[true, false]), Err(Error::UndefinedMetric(_))));
    assert!(auroc_binary(&[0.1], &[true, false]).is_err());
}

#[test]
fn multiclass_metrics() {
    let probs = vec![
        vec![0.7, 0.2, 0.1],
        vec![0.2, 0.6, 0.2],
        vec![0.1, 0.3, 0.6],
        vec![0.5, 0.4, 0.1],
        vec![0.3, 0.3, 0.4],
        vec![0.2, 0.5, 0.3],
    ];
    let labels = [0, 1, 2, 1, 2, 0];
    let per = auroc_per_class(&probs, &labels).unwrap();
    for (k, &a) in per.iter().enumerate() {
        let s: Vec<f64> = probs.iter().map(|p| p[k]).collect();
        let l: Vec<bool> = labels.iter().map(|&y| y == k).collect();
        assert_eq!(a, brute_auroc(&s, &l));
    }
    assert_eq!(auroc_macro_ovr(&probs, &labels).unwrap(), per.iter().sum::<f64>() / 3.0);
    // argmax predictions: 0,1,2,0,2,1 -> class 0: tp1 fn1 tn3 fp1; class 1: tp1 fn1 tn3 fp1; class 2: tp2 tn4
    let (sens, spec) = sens_spec_macro(&probs, &labels).unwrap();
    assert!((sens - (0.5 + 0.5 + 1.0) / 3.0).abs() < 1e-12);
    assert!((spec - (0.75 + 0.75 + 1.0) / 3.0).abs() < 1e-12);
    assert!(matches!(auroc_macro_ovr(&probs[..2], &labels[..2]), Err(Error::UndefinedMetric(_))));
}

#[test]
fn label_smoothing_rows() {
    let row = label_smooth(1, 0.1, 4);
    assert_eq!(row, vec![0.025, 0.925, 0.025, 0.025]);
    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    assert_eq!(label_smooth(0, 0.0, 3), vec![1.0, 0.0, 0.0]);
}

#[test]
fn paired_statistics() {
    // differences [2,2,2,2,0]: mean 1.6, sd √0.8 -> d = 1.789, t = 4
    let a = [3.0, 3.0, 3.0, 3.0, 1.0];
    let b = [1.0; 5];
    let (t, p) = paired_t_test(&a, &b).unwrap();
    let d = cohens_d(&a, &b).unwrap();
    assert!((d - 1.6 / 0.8f64.sqrt()).abs() < 1e-12);
    assert!((t - 4.0).abs() < 1e-12);
    assert!((p - 0.016130).abs() < 1e-5, "p {p}");
    assert_eq!(d * 5f64.sqrt(), t);
    // sign follows a − b, p is symmetric
    let (t2, p2) = paired_t_test(&b, &a).unwrap();
    assert_eq!((t2, p2), (-t, p));

    let c = compare(&[0.9, 0.92, 0.91], &[0.8, 0.83, 0.8]).unwrap();
    assert!((c.mean_diff - 0.1).abs() < 1e-12);
    assert!((c.pct_diff - 100.0 * 0.1 / 0.81).abs() < 1e-9);
    assert_eq!(c.n_runs, 3);

    assert!(matches!(paired_t_test(&[1.0, 2.0], &[0.0, 1.0]), Err(Error::DegenerateTest(_))));
    assert!(matches!(paired_t_test(&[1.0], &[0.0]), Err(Error::DegenerateTest(_))));
    assert!(paired_t_test(&[1.0, 2.0, 3.0], &[0.0, 1.0]).is_err());
}

#[test]
fn radar_examples() {
    assert_eq!(radar_normalize(&[0.8, 0.9, 1.0]).unwrap()[0], 0.2);
    assert_eq!(radar_normalize(&[0.8, 0.9, 1.0]).unwrap()[2], 1.0);
    let mid = radar_normalize(&[0.8, 0.9, 1.0]).unwrap()[1];
    assert!((mid - 0.6).abs() < 1e-12);
    assert!(radar_normalize(&[0.5, 0.5]).is_err());
    assert!(radar_normalize(&[]).is_err());
}

#[test]
fn bootstrap_intervals() {
    assert_eq!(quantile_sorted(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
    assert_eq!(quantile_sorted(&[1.0, 2.0, 3.0, 4.0], 0.0), 1.0);

    let scores: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin() + if i % 2 == 0 { 0.6 } else { 0.0 }).collect();
    let labels: Vec<bool> = (0..60).map(|i| i % 2 == 0).collect();
    let point = auroc_binary(&scores, &labels).unwrap();
    let metric = |idx: &[usize]| {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        auroc_binary(&s, &l)
    };
    let a = bootstrap_ci(60, metric, 500, 0.05, 3).unwrap();
    let b = bootstrap_ci(60, metric, 500, 0.05, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.values.len(), 500);
    assert!(a.low < point && point < a.high, "{} {point} {}", a.low, a.high);
    assert_ne!(bootstrap_ci(60, metric, 500, 0.05, 4).unwrap().values, a.values);

    assert!(matches!(bootstrap_ci(60, metric, 50, 0.05, 3), Err(Error::Config(_))));
    let never = |_: &[usize]| -> memssl::Result<f64> { Err(Error::UndefinedMetric("x".into())) };
    assert!(matches!(bootstrap_ci(10, never, 100, 0.05, 3), Err(Error::UndefinedMetric(_))));
}

#[test]
fn finetune_schedule_endpoints() {
    // 50 epochs of 7 steps, 10 warm-up epochs
    let (warm, last) = (70, 349);
    assert_eq!(warmup_cosine(0, warm, last, 5e-4, 1e-6), 0.0);
    assert_eq!(warmup_cosine(warm, warm, last, 5e-4, 1e-6), 5e-4);
    assert_eq!(warmup_cosine(last, warm, last, 5e-4, 1e-6), 1e-6);
    assert!((warmup_cosine(35, warm, last, 5e-4, 1e-6) - 2.5e-4).abs() < 1e-18);
}

fn labelled(label: usize, split: Split, i: usize) -> SampleRecord {
    SampleRecord {
        image_path: format!("img{i}.png").into(),
        modality: Modality::Synthetic(0),
        specialty: "s".into(),
        label: Some(label),
        split,
    }
}

/// Two classes of flat-coloured images: dark versus bright.
fn separable_dataset(px: usize) -> Dataset {
    let mut records = Vec::new();
    let mut images = Vec::new();
    let mut r = rng(5);
    for (split, n) in [(Split::Train, 16), (Split::Val, 6), (Split::Test, 6)] {
        for i in 0..n {
            let label = i % 2;
            let base = if label == 0 { 0.15 } else { 0.85 };
            let data = (0..px * px * 3).map(|_| base + 0.05 * rand::Rng::random::<f32>(&mut r)).collect();
            records.push(labelled(label, split, images.len()));
            images.push(Image::new(px, px, 3, data).unwrap());
        }
    }
    Dataset { records, images }
}

#[test]
fn separable_task_selects_perfect_checkpoint() {
    let mut cfg = tiny_run_config(1);
    cfg.finetune.freeze_encoder = true;
    cfg.finetune.epochs = 6;
    cfg.finetune.lr_peak = 5e-2;
    let data = separable_dataset(16);
    let enc = init_params(&cfg.encoder, 3).unwrap();
    let out = finetune(&enc, &data, 2, &cfg, "toy").unwrap();
    let best = out.val_auroc.iter().copied().fold(f64::MIN, f64::max);
    assert_eq!(best, 1.0, "{:?}", out.val_auroc);
    let first = out.val_auroc.iter().position(|&v| v == best).unwrap() as u64;
    assert_eq!(out.best_epoch, first);
    assert_eq!(out.report.auroc, 1.0);
    assert_eq!(out.report.n_test, 6);
}

#[test]
fn finetune_rejects_missing_classes_and_splits() {
    let cfg = tiny_run_config(1);
    let enc = init_params(&cfg.encoder, 3).unwrap();
    let data = separable_dataset(16);
    let no_val = data.filter(|r| r.split != Split::Val);
    assert!(finetune(&enc, &no_val, 2, &cfg, "m").is_err());
    let one_class = data.filter(|r| r.label != Some(1));
    assert!(finetune(&enc, &one_class, 2, &cfg, "m").is_err());
    assert!(finetune(&enc, &data, 1, &cfg, "m").is_err());
    let _ = ViTConfig::tiny();
}

#[test]
fn fraction_subsets_are_nested_and_stratified() {
    let mut records = Vec::new();
    for i in 0..100 {
        // class 0: 60 train records, class 1: 40
        records.push(labelled(usize::from(i >= 60), Split::Train, i));
    }
    records.push(labelled(0, Split::Test, 100));
    let data = Dataset { images: vec![Image::filled(8, 8, 3, 0.0); records.len()], records };
    let subsets = stratified_subsets(&data, &[0.1, 0.3, 0.5, 1.0], 7).unwrap();
    let sizes: Vec<usize> = subsets.iter().map(Vec::len).collect();
    assert_eq!(sizes, vec![10, 30, 50, 100]);
    for w in subsets.windows(2) {
        assert!(w[0].iter().all(|i| w[1].contains(i)));
    }
    let class0 = subsets[0].iter().filter(|&&i| i < 60).count();
    assert_eq!(class0, 6);
    assert!(subsets[3].iter().all(|&i| i < 100));
    assert_eq!(stratified_subsets(&data, &[0.3], 7).unwrap(), stratified_subsets(&data, &[0.3], 7).unwrap());
    assert!(stratified_subsets(&data, &[0.0], 7).is_err());
    assert!(stratified_subsets(&data, &[1.5], 7).is_err());
    assert!(stratified_subsets(&data, &[0.001], 7).is_err());
}
