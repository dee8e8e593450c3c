//! Iterated Itô and Stratonovich integrals: conversion, products and
//! conditional expectations given the terminal Brownian value.

mod algebra;
mod bridge;
mod heat;
mod index;

pub use algebra::{
    combination_product, ito_product, ito_product_n, strat_to_ito, unconditional_expectation,
};
pub use bridge::{
    bridge_conditional_expectation, conditional_product_expectation,
    conditional_product_expectation_via_ito,
};
pub use index::{Flavor, IntegralCombination, MultiIndex};
