"""Gradient-boosted trees with in-place fine-tuning and watermark embedding."""
