"""Two-scale homogenization on locally periodic perforated domains."""

__version__ = "0.1.0"
