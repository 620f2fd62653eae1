"""Subcommands of the fourd command line, one module per command group."""
