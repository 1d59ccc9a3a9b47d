//! The linear-algebra attack and the probability bounds that rule it out.

mod attack;
mod bounds;

pub use attack::{attack_demo, chosen_plaintexts, predict, recover_key, AttackOutcome, PairSet};
pub use bounds::{
    chernoff_exponent, event_probability, theorem_check, union_bound, Verdict, EPSILON_LOG2_THRESHOLD,
    LOG2_KEY_COLLISION, MAX_BUDGET, MAX_UNION_R, PAIRS_NEEDED,
};
