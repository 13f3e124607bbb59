pub mod gen;
pub mod probe;
pub mod train;
pub mod verify;
