mod checks;
mod report;
mod she;

pub use checks::{capacity_check, dirichlet_check, kernel_check, operator_check, testfn_build};
pub use report::report;
pub use she::{she_run, she_sweep};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::run::RunContext;

fn rng(ctx: &RunContext) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(ctx.seed)
}
