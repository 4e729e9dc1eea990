"""Unit tests initialization."""

