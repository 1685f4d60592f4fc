//! Pretraining: schedules, EMA teacher, view–memory loss and the
//! checkpointed loop.

mod loss;
mod pretrain;
mod schedule;
mod state;

pub use loss::{ssl_loss, ssl_loss_blocks, ViewLayout};
pub use pretrain::{batch_views, checkpoint_path, pretrain, total_steps, PretrainOutcome, CHECKPOINT_DIR, LOSS_CSV};
pub use schedule::{cosine_value, teacher_temperature, warmup_cosine, ScheduleSet, ScheduleValues};
pub use state::{ema_update, loss_csv, pretrain_step, LossRow, TrainState, LOSS_HEADER};
