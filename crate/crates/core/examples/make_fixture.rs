//! Writes the deterministic three-video fixture corpus.
//!
//! ```text
//! cargo run -p momentscope-core --example make_fixture -- fixtures
//! ```
//!
//! Frames in a scene share a base direction plus per-frame noise. Static
//! scenes get little noise so their sampled keyframes collapse under dedup.

use std::path::PathBuf;

use momentscope_core::embedding::FrameEmbeddings;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const MODELS: [(&str, usize); 2] = [("beit3", 24), ("clip", 32)];

struct Video {
    id: &'static str,
    fps: &'static str,
    frames: u32,
    /// (start, end, noise)
    scenes: &'static [(u32, u32, f32)],
}

const VIDEOS: [Video; 3] = [
    Video {
        id: "v01",
        fps: "25",
        frames: 300,
        scenes: &[(0, 59, 0.05), (60, 139, 0.8), (140, 140, 0.5), (141, 219, 0.3), (220, 299, 1.2)],
    },
    Video {
        id: "v02",
        fps: "30000/1001",
        frames: 240,
        scenes: &[(0, 1, 0.6), (2, 99, 0.02), (100, 179, 0.9), (180, 239, 0.15)],
    },
    Video {
        id: "v03",
        fps: "24",
        frames: 180,
        scenes: &[(5, 64, 1.0), (65, 67, 0.4), (70, 179, 0.25)],
    },
];

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    let boundaries = out.join("boundaries");
    std::fs::create_dir_all(&boundaries)?;

    let mut table = String::from("video_id fps frame_count\n");
    for v in &VIDEOS {
        table.push_str(&format!("{} {} {}\n", v.id, v.fps, v.frames));
        let mut text = String::new();
        for (s, e, _) in v.scenes {
            text.push_str(&format!("{s} {e}\n"));
        }
        std::fs::write(boundaries.join(format!("{}.txt", v.id)), text)?;
    }
    std::fs::write(out.join("videos.txt"), table)?;

    for (m, (model, dim)) in MODELS.iter().enumerate() {
        let dir = out.join("embeddings").join(model);
        std::fs::create_dir_all(&dir)?;
        for (vi, v) in VIDEOS.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 * m as u64 + vi as u64);
            let mut rows = Vec::new();
            let mut base = gaussian(&mut rng, *dim);
            let mut noise = 1.0;
            for f in 0..v.frames {
                if let Some((_, _, n)) = v.scenes.iter().find(|(s, _, _)| *s == f) {
                    base = gaussian(&mut rng, *dim);
                    noise = *n;
                }
                let eps = gaussian(&mut rng, *dim);
                let row = base.iter().zip(&eps).map(|(b, e)| b + noise * e).collect();
                rows.push((f, row));
            }
            FrameEmbeddings::new(*model, *dim, rows)?.save(&dir.join(format!("{}.frm", v.id)))?;
        }
    }
    println!("fixture written to {}", out.display());
    Ok(())
}
