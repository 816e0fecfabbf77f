"""Lyapunov vectors from exact, perturbed and filter-estimated trajectories."""
