"""Bundled scenario-grid configurations for the figure subcommand."""
