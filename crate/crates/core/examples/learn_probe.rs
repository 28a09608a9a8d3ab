//! Scratch experiment: train the main model and the ablations on synthetic
//! scenes and report point-level metrics and wall time. Used to pick the
//! desk-scale hyperparameters.

use std::time::Instant;

use spg_core::config::PipelineConfig;
use spg_core::data::{synth_scene, SceneSpec, NUM_CLASSES};
use spg_core::eval::{metrics, perfect_bound};
use spg_core::models::{AblationVariant, SpgModel};
use spg_core::pipeline::{build_scene, SceneArtifacts};
use spg_core::train::{normalize_scenes, predict, train_loop, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let n_train = 12;
    let n_test = 8;
    let seed = 1u64;

    let mut config = PipelineConfig::default();
    config.voxel_size = 0.03;
    config.mu = 0.03;
    config.n_minp = 20;
    config.max_superpoints = 64;
    config.n_p = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(128);

    let t0 = Instant::now();
    let spec = SceneSpec::default();
    let scenes: Vec<SceneArtifacts> = (0..n_train + n_test)
        .map(|i| build_scene(&synth_scene(seed + i as u64, &spec), &config).unwrap())
        .collect();
    println!("pipeline: {:.1}s for {} scenes", t0.elapsed().as_secs_f64(), scenes.len());
    let sp_counts: Vec<usize> = scenes.iter().map(|s| s.spg.node_count()).collect();
    let qual: Vec<usize> = scenes
        .iter()
        .map(|s| {
            s.spg
                .superpoints
                .iter()
                .filter(|p| p.point_count() >= config.n_minp)
                .count()
        })
        .collect();
    println!("superpoints per scene: {sp_counts:?}");
    println!("embeddable per scene:  {qual:?}");

    for ablation in [AblationVariant::Best, AblationVariant::Unary, AblationVariant::NoEdgeFeat] {
        let t1 = Instant::now();
        let mut model_config = config.model_config(NUM_CLASSES);
        model_config.ablation = ablation;
        let mut model = SpgModel::new(model_config, seed);
        let mut train_scenes: Vec<SceneArtifacts> = (0..n_train)
            .map(|i| build_scene(&synth_scene(seed + i as u64, &spec), &config).unwrap())
            .collect();
        let mut test_scenes: Vec<SceneArtifacts> = (0..n_test)
            .map(|i| build_scene(&synth_scene(seed + (n_train + i) as u64, &spec), &config).unwrap())
            .collect();
        let stats = normalize_scenes(&mut model, &mut train_scenes).unwrap();
        for s in &mut test_scenes {
            spg_core::spg::normalize_features(&mut s.spg, &stats);
        }
        let tc = TrainConfig {
            epochs,
            decay_epochs: vec![epochs * 7 / 10, epochs * 9 / 10],
            seed,
            ..Default::default()
        };
        let curve = train_loop(&mut model, &train_scenes, &tc).unwrap();
        let train_time = t1.elapsed().as_secs_f64();

        let t2 = Instant::now();
        let mut oa_sum = 0.0;
        let mut miou_sum = 0.0;
        let mut perfect_sum = 0.0;
        for s in &test_scenes {
            let pred = predict(&model, s, 3, 777).unwrap();
            let m = metrics(&pred, s.cloud.labels.as_ref().unwrap(), NUM_CLASSES).unwrap();
            let p = perfect_bound(&s.point_partition(), s.cloud.labels.as_ref().unwrap(), NUM_CLASSES)
                .unwrap();
            oa_sum += m.oa;
            miou_sum += m.miou;
            perfect_sum += p.miou;
        }
        println!(
            "{:12} epochs={} loss {:.3} -> {:.3} | test OA {:.3} mIoU {:.3} (perfect {:.3}) | train {:.0}s eval {:.0}s",
            ablation.name(),
            epochs,
            curve.first().map(|c| c.loss).unwrap_or(f64::NAN),
            curve.last().map(|c| c.loss).unwrap_or(f64::NAN),
            oa_sum / n_test as f64,
            miou_sum / n_test as f64,
            perfect_sum / n_test as f64,
            train_time,
            t2.elapsed().as_secs_f64(),
        );
    }
}
