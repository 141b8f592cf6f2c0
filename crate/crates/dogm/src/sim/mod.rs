//! Synthetic scenarios, simulated sensors and ground-truth labeling.
