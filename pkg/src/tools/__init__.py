"""KAN DP-GD MCP tools package."""
