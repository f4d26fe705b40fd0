pub mod codec;
pub mod ptq;
pub mod shard;
pub mod train;
