use std::collections::BTreeMap;

use plantseg::metrics::{adjusted_rand_index, evaluate};
use plantseg::pipeline::segment;
use plantseg::synth::{generate_scene, SceneSpec};
use plantseg::types::PipelineConfig;

#[test]
fn empty_scene_segments_to_nothing() {
    let g = generate_scene(&SceneSpec { plants: 0, ..Default::default() }).unwrap();
    let run = segment(&g.scene, &PipelineConfig::default(), None).unwrap();
    assert!(run.result.leaves.is_empty() && run.result.plants.is_empty());
}

#[test]
fn single_leaf_is_single_plant() {
    for seed in 0..10 {
        let spec = SceneSpec { plants: 1, leaves_per_plant: (1, 1), boundary_mask_probability: 0.0, seed, ..Default::default() };
        let g = generate_scene(&spec).unwrap();
        let run = segment(&g.scene, &PipelineConfig::default(), None).unwrap();
        assert_eq!(run.result.plants.len(), 1, "seed {seed}");
        assert_eq!(run.result.leaves.len(), 1);
        assert_eq!(run.result.plants[0].mask, run.result.leaves[0].mask);
        assert_eq!(run.result.plants[0].mask, g.ground_truth.leaves[0].mask);
    }
}

#[test]
fn base_lands_at_petiole_end() {
    let cfg = PipelineConfig::default();
    let (mut leaves, mut at_base) = (0, 0);
    let mut seed = 0;
    while leaves < 200 {
        let g = generate_scene(&SceneSpec { plants: 10, seed, ..Default::default() }).unwrap();
        seed += 1;
        let run = segment(&g.scene, &cfg, None).unwrap();
        for stem in &run.result.stems {
            let truth = &g.ground_truth.stems[g.candidate_leaf[&stem.leaf_id] as usize];
            leaves += 1;
            at_base += (stem.base.dist(&truth.base) < stem.base.dist(&truth.tip)) as usize;
        }
    }
    assert!(at_base as f64 >= 0.95 * leaves as f64, "{at_base}/{leaves}");
}

#[test]
fn separated_rosettes_recover_plant_map() {
    let cfg = PipelineConfig::default();
    for seed in 100..110 {
        let g = generate_scene(&SceneSpec { plants: 10, min_center_separation: 4.0, seed, ..Default::default() }).unwrap();
        let run = segment(&g.scene, &cfg, None).unwrap();
        let plant_of: BTreeMap<u64, u64> =
            run.result.plants.iter().flat_map(|p| p.leaf_ids.iter().map(move |&l| (l, p.id))).collect();
        let truth = g.leaf_plant();
        let (a, b): (Vec<u64>, Vec<u64>) =
            run.result.leaves.iter().map(|l| (truth[&g.candidate_leaf[&l.id]], plant_of[&l.id])).unzip();
        assert!(adjusted_rand_index(&a, &b) >= 0.95, "seed {seed}");
        let report = evaluate(&[(&run.result, &g.ground_truth)]).unwrap();
        assert!(report.pq_plant >= 0.95, "seed {seed}: {}", report.pq_plant);
    }
}

#[test]
fn soil_candidates_are_filtered() {
    let spec = SceneSpec { plants: 3, soil_masks: 12, seed: 4, ..Default::default() };
    let g = generate_scene(&spec).unwrap();
    let run = segment(&g.scene, &PipelineConfig::default(), None).unwrap();
    assert_eq!(run.counts.soil_rejected, 12);
    assert!(run.result.leaves.iter().all(|l| g.candidate_leaf.contains_key(&l.id)));
}

#[test]
fn missing_attention_falls_back_to_singletons() {
    let mut g = generate_scene(&SceneSpec { plants: 2, seed: 5, ..Default::default() }).unwrap();
    g.scene.attention.clear();
    let run = segment(&g.scene, &PipelineConfig::default(), None).unwrap();
    assert!(run.result.stems.is_empty());
    assert_eq!(run.result.stem_failures.len(), run.result.leaves.len());
    // every leaf still lands in exactly one plant
    let assigned: usize = run.result.plants.iter().map(|p| p.leaf_ids.len()).sum();
    assert_eq!(assigned, run.result.leaves.len());
}
