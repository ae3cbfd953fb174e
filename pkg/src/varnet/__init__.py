"""Variational unit, models and the training engine"""
