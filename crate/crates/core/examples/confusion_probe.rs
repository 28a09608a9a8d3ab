//! Scratch: confusion of the partition ceiling on a few scenes.

use spg_core::config::PipelineConfig;
use spg_core::data::{synth_scene, SceneSpec, CLASS_NAMES, NUM_CLASSES};
use spg_core::pipeline::build_scene;

fn main() {
    let spec = SceneSpec::default();
    let mut config = PipelineConfig::default();
    config.voxel_size = 0.03;
    config.mu = 0.03;
    let mut counts = vec![0u64; NUM_CLASSES * NUM_CLASSES];
    for seed in 0..4 {
        let cloud = synth_scene(300 + seed, &spec);
        let scene = build_scene(&cloud, &config).unwrap();
        let part = scene.point_partition();
        let gt = scene.cloud.labels.as_ref().unwrap();
        // majority label per component
        let count = part.component_count();
        let mut votes = vec![std::collections::HashMap::<u32, usize>::new(); count];
        for (i, g) in gt.iter().enumerate() {
            if let Some(g) = g {
                *votes[part.component_of[i] as usize].entry(*g).or_insert(0) += 1;
            }
        }
        let majority: Vec<u32> = votes
            .iter()
            .map(|v| v.iter().max_by_key(|(_, &n)| n).map(|(k, _)| *k).unwrap_or(0))
            .collect();
        for (i, g) in gt.iter().enumerate() {
            if let Some(g) = g {
                let p = majority[part.component_of[i] as usize];
                counts[*g as usize * NUM_CLASSES + p as usize] += 1;
            }
        }
    }
    println!("{:>12} | {}", "gt \\ perfect", CLASS_NAMES.map(|c| format!("{c:>10}")).join(""));
    for g in 0..NUM_CLASSES {
        let row: String = (0..NUM_CLASSES)
            .map(|p| format!("{:>10}", counts[g * NUM_CLASSES + p]))
            .collect();
        println!("{:>12} | {}", CLASS_NAMES[g], row);
    }
}
