#![allow(dead_code)]

pub mod gpd;
pub mod gradcheck;
