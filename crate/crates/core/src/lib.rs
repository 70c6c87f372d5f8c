pub mod annotator;
pub mod corpus;
pub mod eval;
pub mod index;
pub mod schema;
pub mod schemaboot;
pub mod ssr;
pub mod synth;
pub mod value;
