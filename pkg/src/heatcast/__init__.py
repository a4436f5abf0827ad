"""Rare-event heat-wave forecasting on gridded daily panels."""

__version__ = "0.1.0"
