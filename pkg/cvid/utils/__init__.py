"""
Utils module for CVID

Seeding, persistence and console helpers.
"""
