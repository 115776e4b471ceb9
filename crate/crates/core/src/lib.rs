pub mod assemble;
pub mod conversation;
pub mod dedup;
pub mod diversity;
pub mod net;
pub mod parse;
pub mod pipeline;
pub mod provider;
pub mod seed;
pub mod template;
pub mod text;
