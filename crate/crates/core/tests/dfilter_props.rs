use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use eotrack::consensus::SensorNetwork;
use eotrack::dfilter::{
    distributed_vb_update, local_predict, track, AlgorithmVariant, Batch, FilterOptions,
    NodeBelief, TrackerPriors,
};
use eotrack::experiment::ExperimentConfig;
use eotrack::matstat::SpdMatrix;
use eotrack::metrics::{gwd, EllipseEstimate};
use eotrack::model::ModelConfig;
use eotrack::simkit::{gen_trajectory_s1, sample_stream, scenario_defaults, ScenarioId};
use eotrack::vbcore::{vb_measurement_update, NoiseTreatment};

fn default_network() -> SensorNetwork {
    let cfg = ExperimentConfig::default();
    cfg.network.build(cfg.seed).unwrap()
}

/// `V̂ / (ν̂ − d − 1)` of every node after one distributed update with
/// `L = 30` agree to within 1% of its norm.
#[test]
fn nodes_agree_after_thirty_rounds() {
    let net = default_network();
    let sc = scenario_defaults(ScenarioId::S1).unwrap();
    let truth = gen_trajectory_s1(&sc).unwrap();
    let stream = sample_stream(&truth, &sc, net.n_nodes(), 12).unwrap();
    let cfg = ModelConfig::default();
    let opts = FilterOptions::default();
    let mut beliefs: Vec<NodeBelief> = vec![
        TrackerPriors::default()
            .initial_belief(&truth.scans[0].centroid)
            .unwrap();
        20
    ];
    for batches in stream.iter().take(8) {
        let pred: Vec<NodeBelief> = beliefs
            .iter()
            .map(|b| local_predict(b, &cfg).unwrap())
            .collect();
        beliefs = distributed_vb_update(
            &pred,
            batches,
            &net,
            &cfg,
            &AlgorithmVariant::Distributed,
            &opts,
        )
        .unwrap();
        let ext: Vec<DMatrix<f64>> = beliefs
            .iter()
            .map(|b| b.state.extension_mean().unwrap())
            .collect();
        let norm = ext[0].norm();
        for a in &ext {
            for b in &ext {
                assert!((a - b).norm() < 0.01 * norm);
            }
        }
    }
}

#[test]
fn centralized_variant_matches_pooled_update() {
    let net = SensorNetwork::complete(4).unwrap();
    let sc = scenario_defaults(ScenarioId::S1).unwrap();
    let truth = gen_trajectory_s1(&sc).unwrap();
    let stream = sample_stream(&truth, &sc, 4, 3).unwrap();
    let cfg = ModelConfig::default();
    let opts = FilterOptions::default();
    let prior = local_predict(
        &TrackerPriors::default()
            .initial_belief(&truth.scans[4].centroid)
            .unwrap(),
        &cfg,
    )
    .unwrap();
    let out = distributed_vb_update(
        &vec![prior.clone(); 4],
        &stream[5],
        &net,
        &cfg,
        &AlgorithmVariant::Centralized,
        &opts,
    )
    .unwrap();
    let pooled: Batch = stream[5].iter().flatten().cloned().collect();
    let mut vb = opts.vb;
    vb.tolerance = 0.0;
    let direct = vb_measurement_update(
        &prior.state,
        &prior.noise,
        &pooled,
        &cfg,
        &NoiseTreatment::Estimate,
        &vb,
    )
    .unwrap();
    for b in &out {
        assert!((&b.state.mean - &direct.state.mean).norm() < 1e-9 * direct.state.mean.norm());
        assert!(
            (b.noise.scale.as_matrix() - direct.noise.scale.as_matrix()).norm()
                < 1e-9 * direct.noise.scale.as_matrix().norm()
        );
    }
}

/// A static object observed by every node with known noise: the estimates
/// settle on the true centroid and extension.
#[test]
fn static_object_with_known_noise() {
    let n_nodes = 10;
    let net = SensorNetwork::complete(n_nodes).unwrap();
    let cfg = ModelConfig::default();
    let s = cfg.scaling;
    let center = DVector::from_vec(vec![1000.0, -500.0]);
    let x = DMatrix::from_row_slice(2, 2, &[900.0, 200.0, 200.0, 400.0]);
    let r = DMatrix::identity(2, 2) * 25.0;
    let lx = (&x * s).cholesky().unwrap().l();
    let lr = r.clone().cholesky().unwrap().l();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut draw = || DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
    let scans: Vec<Vec<Batch>> = (0..40)
        .map(|_| {
            (0..n_nodes)
                .map(|_| {
                    (0..10)
                        .map(|_| &center + &lx * draw() + &lr * draw())
                        .collect()
                })
                .collect()
        })
        .collect();
    let variant = AlgorithmVariant::DistributedKnownR(SpdMatrix::new(r).unwrap());
    let est = track(
        &scans,
        &net,
        &cfg,
        &variant,
        &FilterOptions::default(),
        &TrackerPriors::default(),
    )
    .unwrap();
    let truth = EllipseEstimate::new(center.clone(), &x * s);
    for e in &est.last().unwrap()[..] {
        assert!((e.centroid() - &center).norm() < 5.0);
        assert!(
            (&e.extension - &x).norm() < 0.2 * x.norm(),
            "{}",
            e.extension
        );
        let d = gwd(
            &EllipseEstimate::new(e.centroid(), &e.extension * s),
            &truth,
        )
        .unwrap();
        assert!(d < 8.0, "gwd {d}");
    }
}

#[test]
fn s1_track_stays_locked() {
    let mut sc = scenario_defaults(ScenarioId::S1).unwrap();
    sc.scans = 40;
    let truth = gen_trajectory_s1(&sc).unwrap();
    let net = default_network();
    let stream = sample_stream(&truth, &sc, net.n_nodes(), 31).unwrap();
    let cfg = ModelConfig::default();
    for variant in [
        AlgorithmVariant::Distributed,
        AlgorithmVariant::NonCooperative,
        AlgorithmVariant::Centralized,
    ] {
        let est = track(
            &stream,
            &net,
            &cfg,
            &variant,
            &FilterOptions::default(),
            &TrackerPriors::default(),
        )
        .unwrap();
        for (t, scan) in est.iter().enumerate().skip(3) {
            for e in scan {
                let err = (e.centroid() - &truth.scans[t].centroid).norm();
                assert!(err < 250.0, "{variant:?} scan {t}: {err}");
            }
        }
    }
}
