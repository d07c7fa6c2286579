//! Dice and Hausdorff evaluation, regional aggregation and area agreement.

mod overlap;
mod report;

pub use overlap::{diagonal, dice, hausdorff, squared_distance_map};
pub use report::{
    area_regression, assign_regions, evaluate_stack, mean_sd, summarize, MetricsReport, Region, RegionSummary,
    Regression, SliceMetrics,
};
