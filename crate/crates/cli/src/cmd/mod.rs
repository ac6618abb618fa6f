pub mod embed;
pub mod fewshot;
pub mod generate;
pub mod gradcheck;
pub mod ingest;
pub mod probe;
pub mod train;
