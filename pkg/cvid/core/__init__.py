"""
Core module for CVID

Image representation, rain synthesis and dataset manifests.
"""
