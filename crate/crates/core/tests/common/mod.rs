#![allow(dead_code)]

pub mod fixture;
pub mod naive;
pub mod probes;
