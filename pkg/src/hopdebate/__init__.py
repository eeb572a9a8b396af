"""Multi-hop question answering with a two-level debate over reasoning operators."""
