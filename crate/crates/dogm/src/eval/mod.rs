//! Metrics over filter output: velocity clustering, consistency, classification.
