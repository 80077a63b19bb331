"""Relayed NMS, DIA and decoding-path-guided OSD for short LDPC codes."""

__version__ = "0.1.0"
