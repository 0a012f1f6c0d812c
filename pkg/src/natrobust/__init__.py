"""Natural-robustness evaluation of image classifiers on video frames."""

__version__ = "0.1.0"
