//! Planner interventions (under construction).
