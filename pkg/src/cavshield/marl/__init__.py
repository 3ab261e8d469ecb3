"""Safe-robust multi-agent PPO: networks, losses, trainer."""
