"""Configuration, experiments and the command line interface."""
