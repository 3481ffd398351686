//! Log-linear Poisson point-process models fitted by maximum likelihood.

pub mod fit;
pub mod joint;
pub mod likelihood;
pub mod model;
pub mod optimize;
pub mod predict;
pub mod spec;

pub use fit::{fit_mle, FitOptions, FitResult};
pub use joint::{fit_joint, joint_gradient, joint_loglik, model_coefficient_names, JointComponent, JointModel};
pub use likelihood::{
    count_loglik, loglik, loglik_gradient, loglik_hessian, presence_loglik, riemann_loglik, Evaluation,
    LikelihoodData, LikelihoodKind, Observations,
};
pub use model::{
    eta, homogeneous_model, quadratic_model, surfaces, BlockKind, BlockLayout, Covariate, CovariateBlock,
    IntensityModel, QUADRATIC_TERMS,
};
pub use optimize::OptimizerOptions;
pub use predict::{predict_intensity, Fix};
