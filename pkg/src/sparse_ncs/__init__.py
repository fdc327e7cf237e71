"""Sparse observer-controller network design for coupled LTI subsystems."""
