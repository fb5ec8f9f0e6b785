"""Motif continuous prompt tuning for molecular property prediction."""
