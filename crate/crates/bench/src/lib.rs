//! Synthetic inputs shared by the benches.

use prag_core::embedding::Embedding;
use prag_core::geometry::Cell;
use prag_core::nav::NavGrid;
use prag_core::trajectory_db::{RetrievalQuery, Step, TaskRecord, TrajectoryDb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit(rng: &mut impl Rng, dimension: usize) -> Embedding {
    let v: Vec<f64> = (0..dimension).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Embedding::new(v.into_iter().map(|x| x / n).collect()).expect("finite")
}

/// A database of `tasks` records with `steps` steps each, all at iteration 1.
pub fn database(seed: u64, tasks: usize, steps: usize, dimension: usize) -> TrajectoryDb {
    let mut rng = rng(seed);
    let batch = (0..tasks)
        .map(|i| TaskRecord {
            task_id: format!("task_{i:05}"),
            iteration: 1,
            goal_text: format!("goal {i}"),
            goal_embedding: unit(&mut rng, dimension),
            obs_embeddings: (0..steps).map(|_| unit(&mut rng, dimension)).collect(),
            scene_graphs: vec![String::new(); steps],
            history: (0..steps)
                .map(|t| Step {
                    action: format!("navigate(obj_{t})"),
                    observation: String::new(),
                })
                .collect(),
            done: i % 2 == 0,
        })
        .collect();
    let mut db = TrajectoryDb::new(dimension);
    db.update_after_iteration(batch).expect("consistent batch");
    db
}

pub fn query(seed: u64, dimension: usize) -> RetrievalQuery {
    let mut rng = rng(seed);
    RetrievalQuery {
        goal_embedding: unit(&mut rng, dimension),
        obs_embedding: unit(&mut rng, dimension),
    }
}

/// A `size`×`size` room with walls on the border and random interior clutter.
/// The corners just inside the walls stay open and connected.
pub fn cluttered_room(seed: u64, size: usize, clutter: f64) -> (NavGrid, Cell, Cell) {
    let mut rng = rng(seed);
    loop {
        let open: Vec<bool> = (0..size * size)
            .map(|i| {
                let (x, y) = (i % size, i / size);
                let border = x == 0 || y == 0 || x == size - 1 || y == size - 1;
                !border && !rng.gen_bool(clutter)
            })
            .collect();
        let grid = NavGrid::new(size, size, open).expect("shape matches");
        let (a, b) = (Cell { x: 1, y: 1 }, Cell { x: size - 2, y: size - 2 });
        if grid.is_open(a) && grid.is_open(b) {
            let field = prag_core::nav::distance_field(&grid, a).expect("open source");
            if field.get(b).is_finite() {
                return (grid, a, b);
            }
        }
    }
}
