"""Tests for qlangevin."""
