// mdbook cannot run listings that depend on workspace crates, so each
// chapter is pulled in as the docs of an empty module and `cargo test --doc`
// runs the listings. One module per chapter keeps failures attributable.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/scenario.md")]
pub mod scenario {}
#[doc = include_str!("src/ev_based.md")]
pub mod ev_based {}
#[doc = include_str!("src/station_based.md")]
pub mod station_based {}
#[doc = include_str!("src/settlement.md")]
pub mod settlement {}
#[doc = include_str!("src/experiments.md")]
pub mod experiments {}
#[doc = include_str!("src/charts.md")]
pub mod charts {}
#[doc = include_str!("src/solver.md")]
pub mod solver {}
