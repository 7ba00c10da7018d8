//! Task-conditioned hypernetwork multitask learning over chunked documents.
//!
//! Class-label texts are encoded by the same encoder as the documents, passed
//! through a bottleneck network, and turned into classification-head
//! parameters by an adapter hypernetwork. A second hypernetwork maps each
//! task's embeddings to a scalar whose softmax over tasks weights the joint
//! loss. Because heads are generated per class from label text, a trained
//! model can score classes that never appeared in the training labels.

pub mod corpus;
pub mod error;
pub mod evalkit;
pub mod mtmodel;
pub mod numcore;
pub mod synthdata;
pub mod taskcond;
pub mod textenc;
pub mod trainer;

pub use error::{Error, ErrorClass, Result};
