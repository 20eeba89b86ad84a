//! Certainty-gated answer pipeline: linear certainty classifier, Decision
//! Gate, and adaptive re-retrieval.

pub mod classifier;
pub mod pipeline;

pub use classifier::{
    train_classifier, CertaintyLabel, CertaintyProbs, CertaintyScorer, ClassifierWeights,
    TrainHyper, TrainingExample,
};
pub use pipeline::{
    answer, build_training_set_dialogue, build_training_set_qa, compute_omega, featurize,
    select_best_doc, AnswerTrace, ClassCaps, FinalSource, GateDecision, Task, TrainingSet,
};
