//! Reference implementations used to validate the production pipeline.
