"""Delayed cold-damping feedback cooling of many mechanical modes."""
