"""Configuration, orchestration, serialization and the command line."""
