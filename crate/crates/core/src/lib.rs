pub mod bench;
pub mod cmnet;
pub mod detectors;
pub mod error;
pub mod features;
pub mod linalg;
pub mod nn;
pub mod rng;
pub mod sim;
pub mod verify;
