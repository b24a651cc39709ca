"""Text rendering for reports."""
