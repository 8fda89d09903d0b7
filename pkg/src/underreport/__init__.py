"""Under-reporting mixture model for continuous incidence series."""
