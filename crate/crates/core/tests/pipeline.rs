use nubound::estimate::{bca_interval, composite, nu_hat, BcaConfig, PipelineConfig};
use nubound::harness::pipeline_for;
use nubound::knnmi::{estimate_mi, KnnConfig};
use nubound::models::{generate, GenModel};
use nubound::rng::stream;
use nubound::transforms::{gaussianize, GaussianizingMap, SourceCdf};
use nubound::JointSample;

#[test]
fn knn_is_stable_under_the_gaussianizing_map() {
    let model = GenModel::mixture(1.0, 1.0).unwrap();
    let map = GaussianizingMap::known(model.source_cdf().unwrap()).unwrap();
    let cfg = KnnConfig::default();
    let (mut raw, mut diffs) = (Vec::new(), Vec::new());
    for seed in 0..30 {
        let s = generate(&model, 200, &mut stream(seed, &[]));
        let xt = gaussianize(&s.x, &map).unwrap();
        let a = estimate_mi(&s, &cfg).unwrap();
        let b = estimate_mi(&JointSample::new(xt, s.z.clone()).unwrap(), &cfg).unwrap();
        raw.push(a);
        diffs.push(b - a);
    }
    let m = raw.iter().sum::<f64>() / raw.len() as f64;
    let sd = (raw.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (raw.len() - 1) as f64).sqrt();
    for d in diffs {
        assert!(d.abs() < 3.0 * sd, "difference {d} vs sd {sd}");
    }
}

#[test]
fn csv_sample_gives_the_same_estimate() {
    let model = GenModel::bivariate_normal(2.0, 1.0, 1.0).unwrap();
    let s = generate(&model, 40, &mut stream(3, &[]));
    let mut buf = Vec::new();
    s.write_csv(&mut buf).unwrap();
    let back = JointSample::read_csv(buf.as_slice()).unwrap();
    let cfg = pipeline_for(&model).unwrap();
    assert_eq!(nu_hat(&s, &cfg).unwrap(), nu_hat(&back, &cfg).unwrap());
}

#[test]
fn interval_brackets_the_point_estimate_and_composite_dominates_knn() {
    let model = GenModel::mixture(1.0, 0.3).unwrap();
    let cfg = pipeline_for(&model).unwrap();
    for seed in 0..5 {
        let s = generate(&model, 30, &mut stream(seed, &[]));
        let bca = BcaConfig {
            replicates: 400,
            seed,
            ..Default::default()
        };
        let iv = bca_interval(&s, &cfg, &bca).unwrap();
        assert!(iv.lower <= iv.upper);
        assert!(iv.lower <= iv.estimate + 1e-12 && iv.estimate <= iv.upper + 1e-12);
        let c = composite(&s, &KnnConfig::default(), &cfg, &bca).unwrap();
        assert!(c.value >= c.knn_value);
        assert_eq!(c.ci_lower, Some(iv.lower));
    }
}

#[test]
fn empirical_map_tracks_the_known_map() {
    let model = GenModel::bivariate_normal(1.0, 0.5, 1.0).unwrap();
    let s = generate(&model, 200, &mut stream(9, &[]));
    let known = PipelineConfig::new(GaussianizingMap::known(SourceCdf::StandardNormal).unwrap());
    let empirical = PipelineConfig::new(GaussianizingMap::EmpiricalRank);
    let a = nu_hat(&s, &known).unwrap().nu_hat;
    let b = nu_hat(&s, &empirical).unwrap().nu_hat;
    assert!((a - b).abs() < 0.05, "{a} vs {b}");
}
