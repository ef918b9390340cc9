//! Fills a small ring buffer past capacity and shows which transitions
//! survive and how often each is drawn.
//!
//! cargo run --example replay_sampling

use agvlab::replay::{ReplayBuffer, Transition};
use agvlab::Action;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> agvlab::Result<()> {
    let mut buf = ReplayBuffer::new(8);
    for k in 0..12 {
        buf.push(Transition {
            obs: vec![k as f64],
            action: Action::Stay,
            reward: k as f64,
            next_obs: vec![k as f64],
            done: false,
        });
    }
    let kept: Vec<f64> = (0..buf.len()).map(|i| buf.get(i).unwrap().reward).collect();
    println!("capacity {}, kept rewards {kept:?}", buf.capacity());

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut hits = vec![0usize; buf.len()];
    for _ in 0..10_000 {
        for i in buf.sample_indices(4, &mut rng)? {
            hits[i] += 1;
        }
    }
    println!("draws per slot over 10000 batches of 4: {hits:?}");
    match buf.sample_indices(9, &mut rng) {
        Err(e) => println!("oversized batch: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
