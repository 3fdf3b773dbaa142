#![allow(dead_code)]

pub mod align;
pub mod corpus;
pub mod scaling;
