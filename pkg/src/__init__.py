"""KAN DP-GD - two-layer Kolmogorov-Arnold networks trained with GD and private GD."""
