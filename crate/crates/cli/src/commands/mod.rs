pub mod anchors;
pub mod decode;
pub mod gradcheck;
pub mod summary;
pub mod verify;
