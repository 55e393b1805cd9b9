use std::path::PathBuf;

use momentscope_core::embedding::FrameEmbeddings;
use momentscope_core::ingest::{load_ingest_input, run_ingest, DedupConfig, IngestOptions};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Endpoint-inclusive, round-half-away-from-zero positions in float space.
fn oracle_sample(start: u32, end: u32, n: usize) -> Vec<u32> {
    let span = (end - start) as f64;
    let mut out: Vec<u32> = if n == 1 {
        vec![start + (span / 2.0).round() as u32]
    } else {
        (0..n)
            .map(|i| start + (i as f64 * span / (n - 1) as f64).round() as u32)
            .collect()
    };
    out.dedup();
    out
}

fn oracle_dedup(rows: &[Vec<f64>], threshold: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in 0..rows.len() {
        let dup = kept.iter().any(|&k| {
            let c: f64 = rows[i].iter().zip(&rows[k]).map(|(a, b)| a * b).sum();
            c > threshold
        });
        if !dup {
            kept.push(i);
        }
    }
    kept
}

struct Expected {
    sampled: usize,
    kept: Vec<(String, u32)>,
}

fn oracle(threshold: f64, per_scene: usize) -> Expected {
    let root = fixtures();
    let mut sampled = 0;
    let mut kept = Vec::new();
    let table = std::fs::read_to_string(root.join("videos.txt")).unwrap();
    for line in table.lines().skip(1) {
        let id = line.split_whitespace().next().unwrap();
        let emb = FrameEmbeddings::load(&root.join(format!("embeddings/beit3/{id}.frm"))).unwrap();
        let scenes = std::fs::read_to_string(root.join(format!("boundaries/{id}.txt"))).unwrap();
        for scene in scenes.lines() {
            let (s, e) = scene.split_once(' ').unwrap();
            let idx = oracle_sample(s.parse().unwrap(), e.parse().unwrap(), per_scene);
            sampled += idx.len();
            let rows: Vec<Vec<f64>> = idx
                .iter()
                .map(|&f| emb.get(f).unwrap().iter().map(|&x| x as f64).collect())
                .collect();
            for k in oracle_dedup(&rows, threshold) {
                kept.push((id.to_string(), idx[k]));
            }
        }
    }
    kept.sort();
    Expected { sampled, kept }
}

fn ingest(threshold: f32, per_scene: usize) -> momentscope_core::ingest::IngestOutput {
    let root = fixtures();
    let input = load_ingest_input(
        &root.join("boundaries"),
        &root.join("embeddings"),
        &root.join("videos.txt"),
    )
    .unwrap();
    let opts = IngestOptions {
        dedup: DedupConfig {
            similarity_threshold: threshold,
            frames_per_scene: per_scene,
        },
        ..IngestOptions::default()
    };
    run_ingest(&input, &opts).unwrap()
}

#[test]
fn fixture_ingest_matches_oracle() {
    for (threshold, per_scene) in [(0.9, 4), (0.5, 4), (0.99, 6), (0.9, 1)] {
        let out = ingest(threshold, per_scene);
        let want = oracle(threshold as f64, per_scene);
        let got: Vec<(String, u32)> = out
            .manifest
            .frames()
            .iter()
            .map(|f| (f.video_id.clone(), f.frame_index))
            .collect();
        assert_eq!(got, want.kept, "threshold {threshold} per_scene {per_scene}");
        assert_eq!(out.report.frames_sampled, want.sampled);
        assert_eq!(out.report.frames_kept, want.kept.len());
        assert_eq!(out.report.frames_removed, want.sampled - want.kept.len());
        assert_eq!(out.report.scenes_processed, 12);
        assert!(out.report.is_consistent());
        assert_eq!(out.matrices.len(), 2);
        for m in &out.matrices {
            assert_eq!(m.rows(), out.manifest.len());
            assert_eq!(m.corpus_hash(), out.manifest.corpus_hash());
        }
    }
}

#[test]
fn fixture_default_run_removes_static_frames() {
    let out = ingest(0.9, 4);
    assert!(out.report.frames_removed > 0);
    assert!(out.report.frames_kept > 0);
    for s in &out.report.per_scene {
        assert!(s.kept >= 1 && s.kept <= s.sampled);
    }
}
