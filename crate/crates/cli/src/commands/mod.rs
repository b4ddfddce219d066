//! One module per subcommand.

pub mod evaluate;
pub mod extract;
pub mod generate;
pub mod report;
pub mod train;
