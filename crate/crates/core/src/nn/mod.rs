pub mod blocks;
pub mod layers;
pub mod params;

pub use blocks::{
    cdwcc, cdwcc_similarity, effective_dilation, AttentionSpec, Ccb, Ddwpp, ExpandingStage, ExpandingStageSpec, Mhsa,
    Wmhsa, WmhsaShapes, WmhsaSpec, DDWPP_BRANCHES,
};
pub use layers::{BatchNorm2d, Conv2d, Linear, BN_EPS, BN_MOMENTUM};
pub use params::{Ctx, ParamEntry, ParamId, ParamStore, StatUpdate};
