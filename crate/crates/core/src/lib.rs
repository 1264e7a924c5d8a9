pub mod baselines;
pub mod experiment;
pub mod federation;
pub mod linalg;
pub mod marl;
pub mod nn;
pub mod radio;
pub mod rng;
pub mod traffic;
pub mod twin;
