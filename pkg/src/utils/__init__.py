"""Shared helpers: errors, seeded streams, metrics, artifact IO and logging"""
