"""Desk-scale studies: theory sweep, student-teacher recovery, calibration, landscapes"""
