//! Patch-set similarity: score two representations by hand, then rank a
//! pool with the blocked candidate index.

use oadino::corpus::GlobalFeature;
use oadino::similarity::{build_joint, cosine_matrix, score, CandidateIndex, JointRepresentation};

fn main() -> oadino::Result<()> {
    let global = GlobalFeature::new("q", vec![1.0, 0.0, 0.0])?;
    let query = build_joint(&global, &[vec![1.0, 0.0], vec![0.0, 1.0]])?;

    let make = |id: &str, latents: &[Vec<f64>]| {
        build_joint(&GlobalFeature::new(id, vec![1.0, 0.0, 0.0])?, latents)
    };
    let pool: Vec<JointRepresentation> = vec![
        make("same", &[vec![1.0, 0.0], vec![0.0, 1.0]])?,
        make("half", &[vec![1.0, 0.0]])?,
        make("far", &[vec![-1.0, -1.0]])?,
        JointRepresentation::global_only(&GlobalFeature::new("global", vec![0.0, 1.0, 0.0])?)?,
    ];

    let m = cosine_matrix(&query, &pool[1])?;
    println!("cosines of q against 'half': {:?}", m.entries);
    println!("score(q, half) = {:.4}", score(&query, &pool[1])?);
    println!("score(half, q) = {:.4}", score(&pool[1], &query)?);

    // layouts must agree inside one index
    let index = CandidateIndex::new(&pool[..3])?;
    print!("{}", index.rank(&query)?.to_csv());
    Ok(())
}
