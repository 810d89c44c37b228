"""Activity imputation: boosted trees, category disaggregation, completeness and domestic models."""
