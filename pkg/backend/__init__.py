"""Backend package for the SQDM control simulator."""
