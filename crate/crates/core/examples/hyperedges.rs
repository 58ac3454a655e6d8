//! Adaptive hyperedges on a toy vertex set: participation matrix, column
//! sums, and the message-passing output.

use hyperace::hypergraph::{generate_hyperedges, hypergraph_convolve, AhcParams, VertexSet};
use hyperace::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hyperace::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // A 3×4 feature map with 8 channels, flattened to 12 vertices.
    let map = Tensor::uniform([1, 8, 3, 4], -1.0, 1.0, &mut rng);
    let x = VertexSet::from_feature_map(&map)?;
    let p = AhcParams::init(8, 3, 2, &mut rng)?;
    let a = generate_hyperedges(&x, &p)?;
    println!("participation ({} vertices × {} hyperedges):", a.vertices(), a.hyperedges());
    for i in 0..a.vertices() {
        let row: Vec<String> = (0..a.hyperedges()).map(|m| format!("{:.4}", a.get(i, m))).collect();
        println!("  v{i:<2} ({},{}) {}", i / x.width(), i % x.width(), row.join("  "));
    }
    println!("column sums: {:?}", a.column_sums());
    let y = hypergraph_convolve(&x, &a, &p)?;
    println!("output map shape: {:?}", y.to_feature_map().shape());
    Ok(())
}
