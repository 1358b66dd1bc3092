//! Systemic-risk aggregation (under construction).
