pub mod audio;
pub mod autodiff;
pub mod evolution;
pub mod lexicon;
pub mod metrics;
pub mod models;
pub mod training;
