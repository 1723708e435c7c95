"""Tests for sonic-adapters."""
