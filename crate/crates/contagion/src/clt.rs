//! Covariance kernels and Gaussian laws (under construction).
