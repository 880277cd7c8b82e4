//! Detection AP, view projection, IoU and the metrics report.

mod detection;
mod report;
mod views;

pub use detection::*;
pub use report::*;
pub use views::*;
