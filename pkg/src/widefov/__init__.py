"""Reference-guided enhancement of wide field-of-view images using a co-captured narrow view."""

__version__ = "0.1.0"
