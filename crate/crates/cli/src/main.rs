//! Command-line surface for the superpoint-graph segmentation pipeline.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use spg_core::artifacts;
use spg_core::config::{AdjacencyKind, PipelineConfig};
use spg_core::data::{self, load_cloud, save_cloud, CloudFormat, PointCloud, SceneSpec};
use spg_core::eval::{ablation_run, metrics};
use spg_core::models::{AblationVariant, EccVariant, ModelConfig, SpgModel};
use spg_core::pipeline::{self, SceneArtifacts};
use spg_core::train::{normalize_scenes, predict, train_loop, TrainConfig};

#[derive(Parser)]
#[command(name = "spg", about = "Superpoint-graph point cloud semantic segmentation")]
struct Cli {
    #[command(flatten)]
    overrides: ConfigOverrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigOverrides {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    voxel_size: Option<f64>,

    /// Neighbors for the partition graph and features.
    #[arg(long, global = true)]
    knn: Option<usize>,

    /// Regularization strength of the partition energy.
    #[arg(long, global = true)]
    mu: Option<f64>,

    /// Adjacency for superedges: delaunay | sym-knn.
    #[arg(long, global = true)]
    adjacency: Option<String>,

    /// Cap on superedge length in meters (omit for unlimited).
    #[arg(long, global = true)]
    max_superedge_len: Option<f64>,

    /// Partition feature set: geom | geom+elev | geom+rgb | geom+elev+rgb.
    #[arg(long, global = true)]
    partition_features: Option<String>,

    /// Fold components smaller than this into a neighbor (0 disables).
    #[arg(long, global = true)]
    min_superpoint: Option<usize>,

    #[arg(long, global = true)]
    n_p: Option<usize>,

    #[arg(long, global = true)]
    n_minp: Option<usize>,

    /// Edge-conditioned convolution flavor: vv | mv.
    #[arg(long, global = true)]
    ecc: Option<String>,

    /// Model variant (Best, Unary, iCRF, CRF-ECC, GRU13, NoInputGate,
    /// NoConcat, NoEdgeFeat).
    #[arg(long, global = true)]
    ablation: Option<String>,

    /// Inference repetitions whose logits are averaged.
    #[arg(long, global = true)]
    runs: Option<usize>,

    #[arg(long, global = true)]
    epochs: Option<usize>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Force ordered reductions for byte-identical reruns.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic scene.
    Synth {
        #[arg(long, default_value_t = 10_000)]
        points: usize,
        #[arg(long, default_value_t = 2)]
        tables: usize,
        #[arg(long, default_value_t = 3)]
        chairs: usize,
        #[arg(long, default_value_t = 2)]
        walls: usize,
        #[arg(long, default_value_t = 0.006)]
        sigma: f64,
        #[arg(long)]
        no_colors: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bin a cloud onto the voxel grid.
    Voxelize {
        #[arg(long)]
        input: PathBuf,
        /// Output voxel cloud; the point-to-voxel map lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-point geometric features of a (voxelized) cloud.
    Features {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the geometric partition.
    Partition {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also dump the weighted partition graph for inspection.
        #[arg(long)]
        graph_out: Option<PathBuf>,
    },
    /// Build the superpoint graph.
    Spg {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        partition: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on labeled clouds (the pipeline runs per scene).
    Train {
        /// Labeled input clouds; repeat the flag per scene.
        #[arg(long = "cloud", required = true)]
        clouds: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Loss curve CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Label a cloud with a trained checkpoint.
    Infer {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted labels against ground truth.
    Eval {
        /// Cloud with predicted labels.
        #[arg(long)]
        pred: PathBuf,
        /// Cloud with ground-truth labels.
        #[arg(long)]
        gt: PathBuf,
        /// Optional CSV report path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Verify analytic gradients against finite differences.
    Gradcheck {
        /// Check the full-width model on a sampled subset of elements
        /// instead of the scaled-down model on all of them.
        #[arg(long)]
        full_width: bool,
    },
    /// Per-stage wall times across voxel sizes on one synthetic scene.
    Bench {
        #[arg(long, default_value_t = 1_000_000)]
        points: usize,
        /// Comma-separated voxel sizes; "full" skips voxelization.
        #[arg(long, default_value = "full,0.02,0.03,0.04")]
        voxel_sizes: String,
    },
    /// Train and evaluate a named variant (or several) on synthetic scenes.
    Ablation {
        /// Variant names, comma separated. Also accepts Perfect, ECC-VV,
        /// ECC-MV.
        #[arg(long, default_value = "Best,Unary,NoEdgeFeat,Perfect")]
        variants: String,
        #[arg(long, default_value_t = 20)]
        scenes: usize,
        #[arg(long, default_value_t = 12)]
        train_scenes: usize,
    },
}

fn build_config(o: &ConfigOverrides) -> Result<PipelineConfig> {
    let mut config = match &o.config {
        Some(path) => PipelineConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(v) = o.voxel_size {
        config.voxel_size = v;
    }
    if let Some(v) = o.knn {
        config.knn = v;
    }
    if let Some(v) = o.mu {
        config.mu = v;
    }
    if let Some(v) = &o.adjacency {
        config.adjacency = match v.as_str() {
            "delaunay" => AdjacencyKind::Delaunay,
            "sym-knn" => AdjacencyKind::SymKnn,
            other => bail!("unknown adjacency {other:?}"),
        };
    }
    if let Some(v) = o.max_superedge_len {
        config.max_superedge_len = Some(v);
    }
    if let Some(v) = &o.partition_features {
        config.apply_line(&format!("partition_features = {v}"))?;
    }
    if let Some(v) = o.min_superpoint {
        config.min_superpoint = v;
    }
    if let Some(v) = o.n_p {
        config.n_p = v;
    }
    if let Some(v) = o.n_minp {
        config.n_minp = v;
    }
    if let Some(v) = &o.ecc {
        config.ecc = match v.as_str() {
            "vv" => EccVariant::Vv,
            "mv" => EccVariant::Mv,
            other => bail!("unknown ecc flavor {other:?}"),
        };
    }
    if let Some(v) = &o.ablation {
        config.ablation =
            AblationVariant::parse(v).with_context(|| format!("unknown ablation {v:?}"))?;
    }
    if let Some(v) = o.runs {
        config.runs = v;
    }
    if let Some(v) = o.epochs {
        config.epochs = v;
    }
    if let Some(v) = o.seed {
        config.seed = v;
    }
    if let Some(v) = o.threads {
        config.threads = v;
    }
    if o.deterministic {
        config.deterministic = true;
    }
    Ok(config)
}

fn init_threads(config: &PipelineConfig) {
    let threads = if config.threads > 0 {
        config.threads
    } else if config.deterministic {
        1
    } else {
        0
    };
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}

fn map_path_for(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".map.json");
    out.with_file_name(name)
}

fn load_any_cloud(path: &Path) -> Result<PointCloud> {
    Ok(load_cloud(path, CloudFormat::from_path(path))
        .with_context(|| format!("loading cloud {}", path.display()))?)
}

fn class_names_row() -> String {
    data::CLASS_NAMES.map(|c| format!("{c:>11}")).join("")
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let config = build_config(&cli.overrides)?;
    init_threads(&config);
    let hash = config.hash();

    match cli.command {
        Command::Synth { points, tables, chairs, walls, sigma, no_colors, out } => {
            let spec = SceneSpec {
                points,
                tables,
                chairs,
                walls,
                sigma,
                with_colors: !no_colors,
            };
            let cloud = data::synth_scene(config.seed, &spec);
            save_cloud(&cloud, &out, CloudFormat::from_path(&out))?;
            println!("wrote {} points to {}", cloud.len(), out.display());
        }
        Command::Voxelize { input, out } => {
            let cloud = load_any_cloud(&input)?;
            let map = data::voxelize(&cloud, config.voxel_size)?;
            save_cloud(&map.voxel_cloud, &out, CloudFormat::from_path(&out))?;
            artifacts::save_voxel_map(&map_path_for(&out), map.voxel_size, &map.voxel_of, hash)?;
            println!(
                "{} points -> {} voxels at {} m ({})",
                cloud.len(),
                map.voxel_cloud.len(),
                config.voxel_size,
                out.display()
            );
        }
        Command::Features { input, out } => {
            let cloud = load_any_cloud(&input)?;
            let lists = pipeline::knn_lists_with_self(&cloud, config.knn)?;
            let features = spg_core::geomfeat::compute_features(&cloud, &lists)?;
            artifacts::save_features(&out, &features, hash)?;
            println!(
                "features for {} points ({} degenerate neighborhoods) -> {}",
                features.len(),
                features.degenerate.len(),
                out.display()
            );
        }
        Command::Partition { input, features, out, graph_out } => {
            let cloud = load_any_cloud(&input)?;
            let feats = artifacts::load_features(&features)?;
            if feats.len() != cloud.len() {
                bail!("features cover {} points, cloud has {}", feats.len(), cloud.len());
            }
            let node_features = pipeline::partition_features(&cloud, &feats, &config);
            let mut graph = spg_core::graphs::knn_graph(&cloud, config.knn)?;
            spg_core::graphs::edge_weights(&mut graph);
            let problem = spg_core::partition::PartitionProblem {
                graph,
                features: node_features,
                mu: config.mu,
            };
            let mut solution = spg_core::partition::cut_pursuit(
                &problem,
                &spg_core::partition::CutPursuitOpts::default(),
            );
            if config.min_superpoint > 1 {
                solution = spg_core::partition::absorb_small_components(
                    &problem,
                    &solution,
                    config.min_superpoint,
                );
            }
            artifacts::save_partition(&out, &solution, hash)?;
            if let Some(gpath) = graph_out {
                artifacts::save_graph(&gpath, &problem.graph, hash)?;
            }
            println!(
                "{} components, energy {:.6} -> {}",
                solution.component_count(),
                solution.energy,
                out.display()
            );
        }
        Command::Spg { input, features, partition, out } => {
            let cloud = load_any_cloud(&input)?;
            let feats = artifacts::load_features(&features)?;
            let node_features = pipeline::partition_features(&cloud, &feats, &config);
            let solution = artifacts::load_partition(&partition, &node_features)?;
            let (voronoi, degen) = match config.adjacency {
                AdjacencyKind::Delaunay => {
                    let (g, d) =
                        spg_core::graphs::voronoi_graph(&cloud, config.max_superedge_len)?;
                    (g, Some(d))
                }
                AdjacencyKind::SymKnn => {
                    let mut g = spg_core::graphs::knn_graph(&cloud, config.sym_knn_k)?;
                    if let Some(cap) = config.max_superedge_len {
                        g.edges.retain(|e| e.length <= cap);
                    }
                    (g, None)
                }
            };
            if let Some(d) = degen {
                if d != spg_core::graphs::Degeneracy::Full {
                    eprintln!("note: degenerate input, adjacency fell back to {d:?}");
                }
            }
            let spg = spg_core::spg::build_spg(&cloud, &solution, &voronoi)?;
            artifacts::save_spg(&out, &spg, hash)?;
            println!(
                "{} superpoints, {} superedges -> {}",
                spg.node_count(),
                spg.superedges.len(),
                out.display()
            );
        }
        Command::Train { clouds, out, curve } => {
            let mut scenes = Vec::new();
            for path in &clouds {
                let cloud = load_any_cloud(path)?;
                if cloud.labels.is_none() {
                    bail!("training cloud {} has no labels", path.display());
                }
                scenes.push(pipeline::build_scene(&cloud, &config)?);
            }
            let class_count = scenes
                .iter()
                .map(|s| s.cloud.class_count)
                .max()
                .unwrap_or(data::NUM_CLASSES);
            let mut model = SpgModel::new(config.model_config(class_count), config.seed);
            normalize_scenes(&mut model, &mut scenes)?;
            let tc = TrainConfig {
                lr: config.lr,
                batch: config.batch,
                epochs: config.epochs,
                decay_epochs: config.decay_epochs.clone(),
                lr_decay: config.lr_decay,
                clip: config.clip,
                max_superpoints: config.max_superpoints,
                neighborhood_order: config.neighborhood_order,
                jitter_sigma: config.jitter_sigma,
                jitter_clip: config.jitter_clip,
                seed: config.seed,
            };
            let points = train_loop(&mut model, &scenes, &tc)?;
            artifacts::save_checkpoint(&out, &model, hash)?;
            if let Some(cpath) = curve {
                artifacts::save_loss_curve(&cpath, &points)?;
            }
            let last = points.last().map(|p| p.loss).unwrap_or(f64::NAN);
            println!(
                "trained {} epochs on {} scenes (final loss {last:.4}) -> {}",
                config.epochs,
                scenes.len(),
                out.display()
            );
        }
        Command::Infer { input, checkpoint, out } => {
            let cloud = load_any_cloud(&input)?;
            let model = artifacts::load_checkpoint(&checkpoint)?;
            let mut scene = pipeline::build_scene(&cloud, &config)?;
            let stats = spg_core::train::TrainedModel { model }.feature_stats();
            spg_core::spg::normalize_features(&mut scene.spg, &stats);
            let model = artifacts::load_checkpoint(&checkpoint)?;
            let labels = predict(&model, &scene, config.runs, config.seed)?;
            let mut labeled = scene.cloud.clone();
            labeled.labels = Some(labels.iter().map(|&l| Some(l)).collect());
            labeled.class_count = model.config.class_count;
            save_cloud(&labeled, &out, CloudFormat::from_path(&out))?;
            println!("labeled {} points -> {}", labeled.len(), out.display());
        }
        Command::Eval { pred, gt, report } => {
            let pred_cloud = load_any_cloud(&pred)?;
            let gt_cloud = load_any_cloud(&gt)?;
            let pred_labels: Vec<u32> = pred_cloud
                .labels
                .as_ref()
                .context("prediction cloud has no labels")?
                .iter()
                .map(|l| l.unwrap_or(0))
                .collect();
            let gt_labels = gt_cloud.labels.as_ref().context("ground truth cloud has no labels")?;
            let k = pred_cloud.class_count.max(gt_cloud.class_count);
            let m = metrics(&pred_labels, gt_labels, k)?;
            println!("OA   {:.4}", m.oa);
            println!("mAcc {:.4}", m.macc);
            println!("mIoU {:.4}", m.miou);
            println!("{}", class_names_row());
            let row: String = m
                .per_class_iou
                .iter()
                .map(|iou| match iou {
                    Some(v) => format!("{v:>11.4}"),
                    None => format!("{:>11}", "-"),
                })
                .collect();
            println!("{row}");
            if let Some(rpath) = report {
                let mut text = String::from("metric,value\n");
                text.push_str(&format!("oa,{}\nmacc,{}\nmiou,{}\n", m.oa, m.macc, m.miou));
                for (k, iou) in m.per_class_iou.iter().enumerate() {
                    text.push_str(&format!(
                        "iou_class_{k},{}\n",
                        iou.map_or(String::from(""), |v| v.to_string())
                    ));
                }
                std::fs::write(&rpath, text)?;
            }
        }
        Command::Gradcheck { full_width } => {
            let (mc, cap) = if full_width {
                (ModelConfig::standard(data::NUM_CLASSES), Some(64))
            } else {
                (ModelConfig::toy(3), None)
            };
            let report = spg_core::models::full_model_grad_check(&mc, config.seed, 1e-5, cap);
            println!(
                "checked {} elements ({} zero agreements): max relative error {:.3e}",
                report.checked_elements, report.zero_agreements, report.max_rel_error
            );
            if let Some((name, idx, a, n, rel)) = &report.worst {
                println!("worst: {name}[{idx}] analytic {a:.6e} numeric {n:.6e} rel {rel:.3e}");
            }
            if report.max_rel_error >= 1e-4 {
                bail!("gradient check failed");
            }
        }
        Command::Bench { points, voxel_sizes } => {
            run_bench(points, &voxel_sizes, &config)?;
        }
        Command::Ablation { variants, scenes, train_scenes } => {
            let spec = SceneSpec { points: 10_000, ..Default::default() };
            println!("building {scenes} scenes...");
            let bundles: Vec<SceneArtifacts> = (0..scenes)
                .map(|i| {
                    pipeline::build_scene(&data::synth_scene(config.seed + i as u64, &spec), &config)
                })
                .collect::<spg_core::Result<_>>()?;
            println!("{:>12} {:>8} {:>8} {:>8}", "variant", "OA", "mAcc", "mIoU");
            for name in variants.split(',') {
                let outcome = ablation_run(
                    name.trim(),
                    &bundles,
                    train_scenes,
                    &config,
                    data::NUM_CLASSES,
                    config.seed,
                )?;
                println!(
                    "{:>12} {:>8.4} {:>8.4} {:>8.4}",
                    outcome.variant, outcome.oa, outcome.macc, outcome.miou
                );
            }
        }
    }
    Ok(())
}

/// Per-stage wall times of the inference pipeline at several voxel sizes.
fn run_bench(points: usize, voxel_sizes: &str, base: &PipelineConfig) -> Result<()> {
    let spec = SceneSpec { points, ..Default::default() };
    let t0 = Instant::now();
    let cloud = data::synth_scene(base.seed, &spec);
    println!("scene: {} points (generated in {:.1}s)", cloud.len(), t0.elapsed().as_secs_f64());

    // an untrained model exercises the same inference path
    let model_config = base.model_config(data::NUM_CLASSES);
    let model = SpgModel::new(model_config, base.seed);

    println!(
        "{:>8} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "voxel", "voxelize", "features", "partition", "spg", "inference", "total"
    );
    let mut last_total = f64::INFINITY;
    for token in voxel_sizes.split(',') {
        let token = token.trim();
        let mut config = base.clone();
        // the full-resolution run uses a grid finer than the point spacing,
        // so every point keeps its own voxel
        config.voxel_size = if token == "full" { 1e-4 } else { token.parse()? };

        let t = Instant::now();
        let map = data::voxelize(&cloud, config.voxel_size)?;
        let t_voxel = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let lists = pipeline::knn_lists_with_self(&map.voxel_cloud, config.knn)?;
        let features = spg_core::geomfeat::compute_features(&map.voxel_cloud, &lists)?;
        let t_features = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let node_features = pipeline::partition_features(&map.voxel_cloud, &features, &config);
        let mut graph = {
            let raw: Vec<Vec<usize>> = lists.iter().map(|l| l[1..].to_vec()).collect();
            spg_core::graphs::knn_graph_from_lists(&map.voxel_cloud, &raw)
        };
        spg_core::graphs::edge_weights(&mut graph);
        let problem = spg_core::partition::PartitionProblem {
            graph,
            features: node_features,
            mu: config.mu,
        };
        let mut solution = spg_core::partition::cut_pursuit(
            &problem,
            &spg_core::partition::CutPursuitOpts::default(),
        );
        if config.min_superpoint > 1 {
            solution = spg_core::partition::absorb_small_components(
                &problem,
                &solution,
                config.min_superpoint,
            );
        }
        let t_partition = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let (voronoi, _degen) = match config.adjacency {
            AdjacencyKind::Delaunay => {
                let (g, d) =
                    spg_core::graphs::voronoi_graph(&map.voxel_cloud, config.max_superedge_len)?;
                (g, Some(d))
            }
            AdjacencyKind::SymKnn => {
                let mut g = spg_core::graphs::knn_graph(&map.voxel_cloud, config.sym_knn_k)?;
                if let Some(cap) = config.max_superedge_len {
                    g.edges.retain(|e| e.length <= cap);
                }
                (g, None)
            }
        };
        let spg = spg_core::spg::build_spg(&map.voxel_cloud, &solution, &voronoi)?;
        let t_spg = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let mut scene = SceneArtifacts {
            cloud: cloud.clone(),
            voxel_map: map,
            features,
            partition: solution,
            voronoi,
            voronoi_degeneracy: None,
            spg,
        };
        let stats = spg_core::spg::fit_feature_stats(&[&scene.spg])?;
        spg_core::spg::normalize_features(&mut scene.spg, &stats);
        let _labels = predict(&model, &scene, base.runs, base.seed)?;
        let t_infer = t.elapsed().as_secs_f64();

        let total = t_voxel + t_features + t_partition + t_spg + t_infer;
        println!(
            "{:>8} {:>12.2} {:>12.2} {:>12.2} {:>12.2} {:>12.2} {:>12.2}",
            token, t_voxel, t_features, t_partition, t_spg, t_infer, total
        );
        if total >= last_total {
            eprintln!("note: total time did not decrease against the previous (finer) setting");
        }
        last_total = total;
    }
    Ok(())
}
