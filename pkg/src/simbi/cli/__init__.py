"""Command line interface and its configuration, simulator registry and corner-plot export."""
