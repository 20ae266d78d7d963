//! Statistics and scoring for study logs.

pub mod anova;
pub mod heatmap;
pub mod rates;
pub mod report;
pub mod ttest;
pub mod wilcoxon;

pub use anova::{rm_anova_2way, AnovaOptions, Mauchly, Pairwise, RmAnova, RmDesign};
pub use heatmap::{aggregate_heatmap, Heatmap};
pub use rates::{in_region_rate, strongest_point_rate};
pub use report::{analyze, heatmaps, AnalysisConfig, AnalysisReport};
pub use ttest::{unpaired_t, TTest, Variance};
pub use wilcoxon::{wilcoxon_signed_rank, Wilcoxon};
