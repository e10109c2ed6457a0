"""Command-line surface: configuration schema, file formats, experiments."""
