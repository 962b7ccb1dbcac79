"""Cross-fitted AIPW estimation with honest random forests."""
