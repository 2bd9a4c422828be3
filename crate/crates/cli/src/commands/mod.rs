pub mod evaluate;
pub mod gen_data;
pub mod gradcheck;
pub mod montage;
pub mod sample;
pub mod split;
pub mod train;
