"""Propagation sets and discrete Harnack checks for hypoelliptic operators."""
