//! Opinion-dynamics simulations for populations of language-model agents
//! debating how much funding an item should receive.

pub mod backends;
pub mod classifier;
pub mod config;
pub mod engine;
pub mod metrics;
pub mod population;
pub mod protocol;
pub mod report;
pub mod store;
pub mod subjects;

pub use backends::{Backend, BackendError, BackendSpec, CompletionRequest, CompletionResult};
pub use classifier::{Classification, ClassifiedOpinion, Classifier, LexiconConfig, NoKind, OptionLabel};
pub use config::{load_config, parse_config, RunConfig};
pub use engine::{
    run_batch, run_simulation, select_pair, InteractionEvent, RunResults, SimulationConfig, SimulationResult,
};
pub use population::{AgentState, DistributionName, InitialDistribution, OpinionRecord};
pub use protocol::{ModelFamily, PromptPair, UpdateMode};
pub use subjects::{ConnotationSetting, DiscussionSubject, Stance};
