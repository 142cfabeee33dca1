//! Concrete environments: k-bit sequence filling, prepend/append token
//! strings, and the tree used by the exact oracles.

pub mod bitseq;
pub mod pamdp;
pub mod toytree;

pub use bitseq::{
    bitseq_reward, default_mode_distance, levenshtein, make_bitseq, synth_modes, BitSeqEnv,
    BitSeqSpec, DEFAULT_MODE_BASIS,
};
pub use pamdp::{load_reward_table, make_pamdp, PamdpEnv, PamdpSpec, RewardTable};
pub use toytree::{make_toytree, ToyTreeEnv, ToyTreeReward, ToyTreeSpec};
