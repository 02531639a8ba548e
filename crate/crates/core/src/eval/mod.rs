//! Evaluation protocols: distribution-shift buckets, stratified ID splits,
//! inference-time perturbation suites and the tri-objective report.

mod buckets;
mod report;
mod split;
mod suite;

pub use buckets::{
    build_buckets, build_degree_buckets, build_homophily_buckets, build_triobj_buckets, buckets_from_scores, scores,
    Bucket, BucketMap, BucketSpec, Criterion, Role,
};
pub use report::{mean_std, ood_accuracies, triobj_report, MetricsReport, Table, TriObjRow, TRIOBJ_MASK_RATES};
pub use split::{allocate, per_class_split, plan_for, stratified_id_split, SmallClass, SplitPlan};
pub use suite::{run_perturb_suite, trial_seed, verify_frozen, PerturbKind, RateResult, DEFAULT_TRIALS};
