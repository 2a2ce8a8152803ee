pub mod antidist;
pub mod ontmodel;
pub mod pbrpuc;
pub mod qcore;
