//! FIFO memory bank: pushes past capacity, random blocks, similarities.

use memssl::autodiff::Array;
use memssl::memory::{BlockMode, MemoryBank};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn unit(i: usize, dim: usize) -> Vec<f32> {
    let v: Vec<f32> = (0..dim).map(|c| ((i * 31 + c * 17) % 13) as f32 - 6.0).collect();
    let n = v.iter().map(|a| a * a).sum::<f32>().sqrt();
    v.into_iter().map(|a| a / n).collect()
}

fn main() -> memssl::Result<()> {
    let (k, dim, nb) = (8, 4, 4);
    let mut bank = MemoryBank::new(k, dim, nb)?;
    for batch in 0..3 {
        let rows: Vec<Vec<f32>> = (0..3).map(|j| unit(batch * 3 + j, dim)).collect();
        bank.push(&Array::from_rows(&rows)?)?;
        println!("after push {batch}: filled {} cursor {}", bank.filled(), bank.cursor());
    }
    // nine rows into capacity eight: row 0 was overwritten by row 8
    assert_eq!(bank.row(0), unit(8, dim).as_slice());

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let block = bank.sample_block(&mut rng)?;
    println!("random block: {:?}", block.indices);
    let partition = bank.blocks(BlockMode::Partition, &mut rng)?;
    println!("partition: {:?}", partition.iter().map(|b| b.indices.clone()).collect::<Vec<_>>());

    let query = Array::from_rows(&[unit(8, dim)])?;
    let sims = bank.similarities(&query, &block)?;
    println!("query · block = {:?}", sims.row(0));
    Ok(())
}
