//! Sample construction for the four decoder tasks, the curriculum that
//! mixes them, the training loop and sequence-level distillation.

mod curriculum;
mod distill;
mod samples;
mod trainer;

pub use curriculum::{assemble_batch, schedule_pk, CurriculumSchedule};
pub use distill::{distill_corpus, DistillReport};
pub use samples::{
    build_at_sample, build_cmlm_sample, build_cmlm_sample_masked, build_skip_at_sample, build_skip_cmlm_grid_sample,
    build_skip_cmlm_sample, build_skip_cmlm_with_layout, skip_anchor_positions, SkipCmlmLayout, Task, TrainingSample,
};
pub use trainer::{
    finetune_from_at, loss_improvement, train, train_with, write_loss_csv, LossRecord, TaskMix, TrainConfig,
};
