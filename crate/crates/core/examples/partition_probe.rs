//! Scratch experiment: sweep the regularization strength and report the
//! partition ceiling (majority-label mIoU) and superpoint counts.

use spg_core::config::PipelineConfig;
use spg_core::data::{synth_scene, SceneSpec, NUM_CLASSES};
use spg_core::eval::perfect_bound;
use spg_core::pipeline::build_scene;

fn main() {
    let spec = SceneSpec::default();
    let scenes: Vec<_> = (0..6).map(|i| synth_scene(100 + i, &spec)).collect();
    for mu in [0.01, 0.02, 0.03, 0.05, 0.08, 0.12, 0.2] {
        let mut config = PipelineConfig::default();
        config.voxel_size = 0.03;
        config.mu = mu;
        let mut comps = Vec::new();
        let mut perfect_miou = 0.0;
        let mut perfect_oa = 0.0;
        let mut small = 0usize;
        let mut total = 0usize;
        for cloud in &scenes {
            let scene = build_scene(cloud, &config).unwrap();
            comps.push(scene.spg.node_count());
            let m = perfect_bound(
                &scene.point_partition(),
                scene.cloud.labels.as_ref().unwrap(),
                NUM_CLASSES,
            )
            .unwrap();
            perfect_miou += m.miou;
            perfect_oa += m.oa;
            small += scene
                .spg
                .superpoints
                .iter()
                .filter(|s| s.point_count() < 20)
                .count();
            total += scene.spg.node_count();
        }
        // share of points inside superpoints of at least 20 points
        let mut big_pts = 0usize;
        let mut all_pts = 0usize;
        for cloud in &scenes {
            let scene = build_scene(cloud, &config).unwrap();
            for sp in &scene.spg.superpoints {
                all_pts += sp.point_count();
                if sp.point_count() >= 20 {
                    big_pts += sp.point_count();
                }
            }
        }
        let n = scenes.len() as f64;
        println!(
            "mu {:5.3}: perfect mIoU {:.3} OA {:.3} | superpoints {:?} | {}/{} below 20 pts | {:.0}% pts embedded",
            mu,
            perfect_miou / n,
            perfect_oa / n,
            comps,
            small,
            total,
            100.0 * big_pts as f64 / all_pts as f64
        );
        let mut per_sum = vec![0.0; NUM_CLASSES];
        for cloud in &scenes {
            let scene = build_scene(cloud, &config).unwrap();
            let m = perfect_bound(
                &scene.point_partition(),
                scene.cloud.labels.as_ref().unwrap(),
                NUM_CLASSES,
            )
            .unwrap();
            for (acc, iou) in per_sum.iter_mut().zip(&m.per_class_iou) {
                *acc += iou.unwrap_or(0.0);
            }
        }
        let per: Vec<String> = per_sum
            .iter()
            .zip(spg_core::data::CLASS_NAMES.iter())
            .map(|(v, name)| format!("{name} {:.2}", v / n))
            .collect();
        println!("         per-class: {}", per.join(", "));
    }
}
