//! Steps two agents through a short scripted episode and prints the reward
//! breakdown of every tick.
//!
//! cargo run --example gridworld_rewards

use agvlab::gridworld::{observe, reset, step, Action};
use agvlab::parse_map;

fn main() -> agvlab::Result<()> {
    let map = parse_map("S...#\n.....\n..T..\nS....\n....T")?;
    let script = [
        [Action::SE, Action::E],
        [Action::SE, Action::SE],
        [Action::Stay, Action::E],
        [Action::Stay, Action::E],
    ];
    let mut state = reset(&map);
    println!("{}", map.to_text());
    println!("agent 0 observation: {:?}", observe(&map, &state, 0));
    for actions in script {
        let (next, out) = step(&map, &state, &actions, map.default_max_steps())?;
        for (i, ev) in out.events.iter().enumerate() {
            println!(
                "tick {} agent {i} {:?} {} -> {}: reward {:+} {ev:?}",
                state.step, actions[i], state.positions[i], next.positions[i], out.rewards[i]
            );
        }
        state = next;
        if out.terminal {
            println!("episode over: {}", out.cause.as_str());
            break;
        }
    }
    Ok(())
}
