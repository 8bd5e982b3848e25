//! Standard, relativistic and relativistic-average GAN objectives with the
//! machinery needed to train and check them on toy 2-D data.

pub mod autodiff;
pub mod nn;
pub mod losses;
pub mod optim;
pub mod data;
pub mod metrics;
pub mod trainer;
pub mod gradcheck;
