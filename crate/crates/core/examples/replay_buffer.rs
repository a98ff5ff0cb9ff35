//! The structured replay buffer on its own: push transitions, inspect the
//! empirical kernel, and draw the per-pair indicators used by the primal step.
//!
//! ```text
//! cargo run --release --example replay_buffer
//! ```

use pgda_rl::mdp::{frozen_lake_4x4, RngStream};
use pgda_rl::replay::{buffer_push, sample_incoming, IncomingSets, ReplayBuffer};

fn main() -> pgda_rl::Result<()> {
    let mdp = frozen_lake_4x4(true, 0.9).validate()?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut buffer = ReplayBuffer::new(ns, na, Some(1000));
    let mut incoming = IncomingSets::new(ns, na);
    let mut rng = RngStream::new(3);

    // uniformly random exploration
    let mut s = mdp.start_state();
    for _ in 0..50_000 {
        let a = rng.index(na);
        let next = mdp.sample_transition(s, a, &mut rng)?;
        buffer_push(&mut buffer, &mut incoming, (s, a), next)?;
        s = next;
    }

    let (s0, a0) = (0, 2);
    let emp = buffer.empirical(s0, a0);
    println!("pair ({s0}, {a0}) visited {} times", buffer.nu(s0, a0));
    for t in 0..ns {
        let p = mdp.next_dist(s0, a0)[t];
        if p > 0.0 || emp[t] > 0.0 {
            println!("  -> {t:>2}: empirical {:.3}  true {:.3}", emp[t], p);
        }
    }
    println!("least visited pair: {} visits", buffer.min_visits());

    let target = 4;
    let draws = sample_incoming(&buffer, &incoming, target, &mut rng)?;
    println!("pairs seen moving into state {target}:");
    for (pair, hit) in draws {
        println!("  ({}, {}) sampled {}", pair / na, pair % na, if hit { "a hit" } else { "a miss" });
    }
    Ok(())
}
