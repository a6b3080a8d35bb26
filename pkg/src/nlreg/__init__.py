"""Nonlocal operators, monotone solvers and smooth approximation of fully nonlinear nonlocal equations."""
