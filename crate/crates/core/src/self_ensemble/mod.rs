//! Student/teacher training: the combined loss, Adagrad, the EMA teacher
//! with its decay ramp-up, and the epoch loop that calls the noise filter.

mod adagrad;
mod checkpoint;
mod ema;
mod loss;
mod schedule;
mod train;

pub use adagrad::{Adagrad, StepOutcome, ADAGRAD_EPS};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use ema::TeacherState;
pub use loss::{combined_loss, LossBreakdown};
pub use schedule::{alpha_at, AlphaSchedule};
pub use train::{train, EpochRecord, EpochReport, TrainConfig, TrainLog, TrainOutcome, Trainer};
