//! Monte Carlo harness (under construction).
