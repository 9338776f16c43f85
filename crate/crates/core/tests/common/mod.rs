#![allow(dead_code)]

pub mod golden;
pub mod kernels;
pub mod properties;
